#pragma once

// Model and training configuration, loaded from YAML.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dualtrack/datagen.hpp"

namespace dualtrack {

struct TransformerConfig {
  int hidden = 64;
  int intermediate = 128;
  int layers = 2;
  int heads = 4;

  void validate(const std::string& what) const;
};

struct LocalEncoderConfig {
  std::vector<int> channels{8, 16, 32, 32};
  std::vector<int> temporal_kernels{3, 3, 1, 1};
  bool causal = false;
  int pooled_dim = 64;
  int pool_heads = 4;

  // Frames on each side of t that can reach embedding t (trailing only when causal).
  int radius() const;
  void validate() const;
};

struct GlobalEncoderConfig {
  std::string backbone = "small-2d-cnn";
  std::vector<int> channels{8, 16, 32, 32};
  int feature_dim = 64;
  TransformerConfig temporal{64, 128, 2, 4};
  int input_height = 64;
  int input_width = 64;

  void validate() const;
};

struct FusionConfig {
  TransformerConfig interposer{64, 32, 4, 4};
  TransformerConfig decoder{64, 128, 2, 4};
  int global_stride = 8;

  void validate() const;
};

struct ModelConfig {
  int image_height = 64;
  int image_width = 64;
  LocalEncoderConfig local;
  GlobalEncoderConfig global;
  FusionConfig fusion;
  TransformerConfig coupled{64, 128, 2, 4};

  void validate() const;
  // 16 hex digits, stable across runs and platforms.
  std::string hash() const;
};

enum class Stage { local_cnn, local_pool, global, fusion, coupled };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

enum class Variant { zero, local_only, coupled, dualtrack };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct StagePlan {
  Stage stage = Stage::local_cnn;
  int epochs = 1;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  int batch_size = 8;
  int window = 16;        // local sampler length
  int global_count = 8;   // global sampler length
  bool freeze_local_cnn = true;  // fusion only
  int val_every = 10;     // epochs; 0 disables

  void validate() const;
};

struct TrainConfig {
  std::string preset = "desk";
  std::filesystem::path dataset_root;
  std::uint64_t seed = 1;
  bool deterministic = true;
  ModelConfig model;
  std::vector<StagePlan> stages;
  int checkpoint_every = 0;  // steps; 0 writes only at stage end
  GenerateConfig generate;

  const StagePlan& plan(Stage s) const;
  void validate() const;
};

TrainConfig desk_preset();
TrainConfig paper_preset();

// A file may start from a preset ("preset: desk") and override any key.
TrainConfig load_config(const std::filesystem::path& path);
TrainConfig parse_config(const std::string& yaml_text);
std::string dump_config(const TrainConfig& config);

}  // namespace dualtrack
