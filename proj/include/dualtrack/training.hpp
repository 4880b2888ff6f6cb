#pragma once

// Staged training: local CNN, local pooling, global encoder, fusion, and the
// coupled ablation. AdamW with a cosine-annealed learning rate in every stage.
//
// Run directory layout:
//   checkpoints/<stage>.pt       selected weights (best validation GPE, else last)
//   checkpoints/<stage>_last.pt  latest step, with optimizer state, for --resume
//   train_log.csv                append-only: step,stage,epoch,loss,lr,val_gpe_mm,val_lpe_um

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dualtrack/config.hpp"
#include "dualtrack/evaluation.hpp"
#include "dualtrack/networks.hpp"
#include "dualtrack/sweep.hpp"

namespace dualtrack {

// Mean over all elements of the squared difference.
torch::Tensor tracking_loss(const torch::Tensor& pred, const torch::Tensor& target);
// Same, restricted to rows where mask [B, N-1] is true.
torch::Tensor masked_tracking_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& mask);

double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps);

// Sweeps plus their tensors, loaded once per stage.
struct TrainingSet {
  std::vector<Sweep> sweeps;
  std::vector<torch::Tensor> frames;      // [N, H, W]
  std::vector<torch::Tensor> targets;     // [N-1, 6] adjacent relatives
  std::vector<GlobalInput> global_inputs; // evenly spaced, at the global resolution
};

TrainingSet make_training_set(std::vector<Sweep> sweeps, const ModelConfig& model);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;  // a <stage>_last.pt checkpoint
  std::int64_t stop_after_steps = -1;           // write _last.pt and return early
  bool verbose = false;
};

struct StageResult {
  std::vector<double> losses;  // one per optimizer step run in this call
  std::int64_t first_step = 0;
  double best_val_gpe_mm = -1.0;
  std::filesystem::path checkpoint;
  bool complete = false;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, Stage stage, bool last = false);

// Stages whose selected checkpoints must exist before `stage` can run.
std::vector<Stage> prerequisites(Stage stage);

StageResult train_stage(const TrainConfig& config, Stage stage, const std::filesystem::path& run_dir,
                        const TrainingSet& train, const TrainingSet* val, const TrainOptions& options = {});

// Builds a model for `variant` from the run's selected checkpoints.
DualTrackModel load_model(const TrainConfig& config, const std::filesystem::path& run_dir, Variant variant,
                          std::string* checkpoint_hash = nullptr);

// Stage needed to produce each variant's selected checkpoint.
Stage final_stage(Variant variant);

void apply_determinism(const TrainConfig& config);

// Stages, in dependency order, that produce `variant`.
std::vector<Stage> stages_for(Variant variant);

// Runs every listed stage whose selected checkpoint is missing, loading the
// train and val splits from config.dataset_root once.
void ensure_stages(const TrainConfig& config, const std::filesystem::path& run_dir, const std::vector<Stage>& stages,
                   bool verbose = false);

struct AblationResult {
  std::map<std::string, std::vector<SweepEvaluation>> per_sweep;  // by variant name
  std::map<std::string, MetricsReport> mean;
};

// Trains what the variants still need, then evaluates each on `split`.
AblationResult run_ablation(const TrainConfig& config, const std::filesystem::path& run_dir,
                            const std::vector<Variant>& variants, const std::string& split = "test",
                            bool verbose = false);

}  // namespace dualtrack
