#pragma once

// On-disk sweep format, dataset index, and the two subsequence samplers.
//
// Sweep directory layout:
//   meta.json   {"id", "shape": [N, H, W], "dtype": "float32",
//                "pixel_spacing_mm": [sx, sy], "image_to_probe": [16 floats, row-major],
//                "frames_file": "frames.bin", "poses_file": "poses.csv"}
//   frames.bin  N*H*W little-endian float32, frame-major then row-major
//   poses.csv   header tx,ty,tz,rx,ry,rz; mm and degrees. rx/ry/rz are the
//               Z-Y-X intrinsic angles about x (roll), y (pitch), z (yaw).
//
// A dataset root holds one directory per sweep plus index.json:
//   {"train": [ids...], "val": [ids...], "test": [ids...]}

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dualtrack/geometry.hpp"
#include "dualtrack/sweep.hpp"

namespace dualtrack {

void save_sweep(const Sweep& sweep, const std::filesystem::path& dir);
Sweep load_sweep(const std::filesystem::path& dir);

struct DatasetIndex {
  std::map<std::string, std::vector<std::string>> splits;  // "train" | "val" | "test" -> ids

  const std::vector<std::string>& split(const std::string& name) const;
};

void save_index(const DatasetIndex& index, const std::filesystem::path& root);
DatasetIndex load_index(const std::filesystem::path& root);
std::vector<Sweep> load_split(const std::filesystem::path& root, const std::string& split);

// One row of a subsequence batch.
struct Subsequence {
  FrameStack frames;                          // L x h x w
  std::vector<int> frame_indices;             // absolute positions in the sweep, increasing
  std::vector<std::array<double, 6>> targets; // L-1 relatives between consecutive sampled frames
};

// Relatives p_{idx[k+1] <- idx[k]} for the given (increasing) indices.
std::vector<std::array<double, 6>> relative_targets(std::span<const Pose> poses,
                                                    std::span<const int> indices);

Subsequence sample_local_subsequence(const Sweep& sweep, int length, std::mt19937_64& rng);
Subsequence sample_global_subsequence(const Sweep& sweep, int count, std::mt19937_64& rng,
                                      int out_height, int out_width);

// 0, stride, 2*stride, ...; the last frame is appended if missing.
std::vector<int> subsample_evenly(int num_frames, int stride);

// Area-average resampling of every frame to (out_h, out_w). Exact box overlap
// weights, so any size pair works.
FrameStack area_resize(const FrameStack& in, int out_height, int out_width);

FrameStack gather_frames(const FrameStack& in, std::span<const int> indices);

}  // namespace dualtrack
