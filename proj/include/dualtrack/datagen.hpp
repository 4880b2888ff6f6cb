#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dualtrack/phantom.hpp"

namespace dualtrack {

struct GenerateConfig {
  std::map<std::string, int> split_counts{{"train", 200}, {"val", 20}, {"test", 20}};
  int num_frames = 64;
  int width = 64;
  int height = 64;
  double pixel_spacing_mm = 0.5;
  std::array<int, 3> phantom_size{128, 128, 128};
  double voxel_spacing_mm = 1.0;
  int n_landmarks = 8;
  int sweeps_per_phantom = 5;
  // linear, c-shape, s-shape
  std::map<TrajectoryFamily, double> family_mix{
      {TrajectoryFamily::linear, 0.4}, {TrajectoryFamily::c_shape, 0.3}, {TrajectoryFamily::s_shape, 0.3}};
  std::array<double, 2> length_range_mm{32.0, 63.0};
  std::array<double, 2> rotation_range_deg{0.3, 0.8};
  double noise_level = 0.05;
  std::uint64_t seed = 1;
};

struct GeneratedSweepInfo {
  std::string id;
  std::string split;
  TrajectoryFamily family = TrajectoryFamily::linear;
  double length_mm = 0.0;
  std::uint64_t phantom_seed = 0;
};

// Per-split family counts by largest remainder, so the mix is exact up to rounding.
std::map<TrajectoryFamily, int> family_counts(int total, const std::map<TrajectoryFamily, double>& mix);

// Writes index.json, generation.json and one directory per sweep. Refuses a
// non-empty root unless force is set.
std::vector<GeneratedSweepInfo> generate_dataset(const GenerateConfig& config,
                                                 const std::filesystem::path& root, bool force);

std::vector<GeneratedSweepInfo> load_generation_manifest(const std::filesystem::path& root);

// Single sweep on a fresh phantom; used by tests and the generator.
Sweep generate_sweep(const GenerateConfig& config, const Phantom& phantom, TrajectoryFamily family,
                     double length_mm, double rotation_deg, std::uint64_t seed, const std::string& id);

}  // namespace dualtrack
