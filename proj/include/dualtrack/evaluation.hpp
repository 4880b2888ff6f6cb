#pragma once

// Full-sweep inference, trajectory estimates, and metric reports.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dualtrack/config.hpp"
#include "dualtrack/geometry.hpp"
#include "dualtrack/metrics.hpp"
#include "dualtrack/networks.hpp"
#include "dualtrack/sweep.hpp"

namespace dualtrack {

// [N, H, W] float tensor copy of a sweep's frames.
torch::Tensor frames_tensor(const FrameStack& frames);

// Relatives p_{k+1<-k}, [N-1, 6] float64, for one full sweep.
torch::Tensor predict_sweep(DualTrackModel& model, Variant variant, const torch::Tensor& frames);

std::vector<PoseParams> to_params(const torch::Tensor& relparams);

struct TrajectoryEstimate {
  std::string sweep_id;
  std::string checkpoint_hash;
  std::string variant;
  std::vector<PoseParams> relparams;
  Trajectory composed;  // compose_trajectory(relparams, identity)
};

TrajectoryEstimate make_estimate(const std::string& sweep_id, const std::vector<PoseParams>& relparams,
                                 const std::string& variant, const std::string& checkpoint_hash);
void save_estimate(const TrajectoryEstimate& estimate, const std::filesystem::path& path);
TrajectoryEstimate load_estimate(const std::filesystem::path& path);

struct SweepEvaluation {
  std::string sweep_id;
  MetricsReport report;
};

SweepEvaluation evaluate_estimate(const Sweep& sweep, const TrajectoryEstimate& estimate);

std::vector<SweepEvaluation> evaluate_sweeps(DualTrackModel& model, Variant variant, const std::vector<Sweep>& sweeps,
                                             const std::string& checkpoint_hash = {},
                                             std::vector<TrajectoryEstimate>* estimates = nullptr);

// Per-sweep <id>.json, summary.json, summary.csv and summary.txt under dir.
MetricsReport write_evaluation(const std::vector<SweepEvaluation>& evals, const std::filesystem::path& dir,
                               const std::string& title);

// Mean-per-metric table, one row per variant.
void write_ablation_table(const std::map<std::string, MetricsReport>& rows, const std::filesystem::path& csv,
                          const std::filesystem::path& txt);

struct ReconstructionPlots {
  std::filesystem::path ribbon;        // trajectory.svg
  std::filesystem::path out_of_plane;  // out_of_plane.svg
};

// Ground truth plus one trace per estimate.
ReconstructionPlots write_reconstruction_plots(const Sweep& sweep, const std::vector<TrajectoryEstimate>& estimates,
                                               const std::filesystem::path& dir);

// Out-of-plane displacement (z of each frame origin in the first frame's coordinates).
std::vector<double> out_of_plane_displacement(const Trajectory& trajectory);

}  // namespace dualtrack
