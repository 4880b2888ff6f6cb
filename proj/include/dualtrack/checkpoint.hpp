#pragma once

// Single-file checkpoints: model tensors, optional optimizer state, and a
// JSON manifest (config hash, stage, step).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dualtrack/networks.hpp"

namespace dualtrack {

struct CheckpointManifest {
  std::string config_hash;
  std::string stage;
  std::int64_t step = 0;
  std::int64_t total_steps = 0;
  int epoch = 0;
  std::uint64_t seed = 0;
  double best_val_gpe_mm = -1.0;  // negative when no validation ran
  bool complete = false;
};

void save_checkpoint(const std::filesystem::path& path, DualTrackModel& model, const CheckpointManifest& manifest,
                     torch::optim::Optimizer* optimizer = nullptr);

CheckpointManifest read_manifest(const std::filesystem::path& path);

// Loads tensors of the named top-level submodules (all when empty). Throws
// incompatible_checkpoint when the config hash differs from the model's.
CheckpointManifest load_checkpoint(const std::filesystem::path& path, DualTrackModel& model,
                                   const std::vector<std::string>& modules = {},
                                   torch::optim::Optimizer* optimizer = nullptr);

}  // namespace dualtrack
