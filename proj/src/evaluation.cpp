#include "dualtrack/evaluation.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dualtrack/error.hpp"
#include "dualtrack/plot.hpp"

namespace dualtrack {

namespace fs = std::filesystem;
using json = nlohmann::json;

torch::Tensor frames_tensor(const FrameStack& frames) {
  return torch::from_blob(const_cast<float*>(frames.data.data()), {frames.count, frames.height, frames.width},
                          torch::kFloat)
      .clone();
}

torch::Tensor predict_sweep(DualTrackModel& model, Variant variant, const torch::Tensor& frames) {
  require(frames.dim() == 3 && frames.size(0) >= 2, ErrorCategory::invalid_argument,
          "predict: expected [N, H, W] frames with N >= 2");
  const auto n = frames.size(0);
  if (variant == Variant::zero) return torch::zeros({n - 1, 6}, torch::kDouble);
  torch::NoGradGuard guard;
  const torch::Tensor x = frames.to(model->parameters().front().dtype());
  torch::Tensor out;
  switch (variant) {
    case Variant::local_only:
      out = model->predict_local_only(model->local_features(x.unsqueeze(0))).squeeze(0);
      break;
    case Variant::coupled:
      out = model->predict_coupled(model->local_features(x.unsqueeze(0)), {}).squeeze(0);
      break;
    default:
      out = model->forward(x);
      break;
  }
  return out.to(torch::kDouble).contiguous();
}

std::vector<PoseParams> to_params(const torch::Tensor& relparams) {
  const torch::Tensor r = relparams.to(torch::kDouble).contiguous();
  require(r.dim() == 2 && r.size(1) == 6, ErrorCategory::shape_mismatch, "relparams must be [N-1, 6]");
  require(torch::isfinite(r).all().item<bool>(), ErrorCategory::non_finite, "prediction contains non-finite values");
  std::vector<PoseParams> out;
  const double* p = r.data_ptr<double>();
  for (int64_t k = 0; k < r.size(0); ++k) {
    std::array<double, 6> v{};
    std::copy_n(p + 6 * k, 6, v.begin());
    out.push_back(PoseParams::from_array(v));
  }
  return out;
}

TrajectoryEstimate make_estimate(const std::string& sweep_id, const std::vector<PoseParams>& relparams,
                                 const std::string& variant, const std::string& checkpoint_hash) {
  TrajectoryEstimate e;
  e.sweep_id = sweep_id;
  e.variant = variant;
  e.checkpoint_hash = checkpoint_hash;
  e.relparams = relparams;
  e.composed = compose_trajectory(relparams, Pose::identity());
  return e;
}

void save_estimate(const TrajectoryEstimate& e, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  json rel = json::array(), poses = json::array();
  for (const auto& p : e.relparams) rel.push_back(p.to_array());
  for (const auto& t : e.composed) {
    std::vector<double> m(16);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m[4 * r + c] = t.matrix()(r, c);
    poses.push_back(m);
  }
  json j{{"sweep_id", e.sweep_id},
         {"variant", e.variant},
         {"checkpoint_hash", e.checkpoint_hash},
         {"relparams", rel},
         {"composed", poses}};
  std::ofstream out(path);
  out << std::setprecision(17) << j.dump(1);
  require(static_cast<bool>(out), ErrorCategory::io_error, "cannot write " + path.string());
}

TrajectoryEstimate load_estimate(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCategory::io_error, "cannot read estimate " + path.string());
  try {
    const json j = json::parse(in);
    std::vector<PoseParams> rel;
    for (const auto& r : j.at("relparams")) rel.push_back(PoseParams::from_array(r.get<std::array<double, 6>>()));
    return make_estimate(j.at("sweep_id").get<std::string>(), rel, j.value("variant", ""),
                         j.value("checkpoint_hash", ""));
  } catch (const json::exception& e) {
    fail(ErrorCategory::malformed_meta, path.string() + ": " + e.what());
  }
}

SweepEvaluation evaluate_estimate(const Sweep& sweep, const TrajectoryEstimate& estimate) {
  require(estimate.composed.size() == sweep.poses.size(), ErrorCategory::shape_mismatch,
          "estimate for " + estimate.sweep_id + " has " + std::to_string(estimate.composed.size()) +
              " poses, sweep has " + std::to_string(sweep.poses.size()));
  SweepEvaluation ev;
  ev.sweep_id = sweep.id;
  ev.report = evaluate_trajectory(sweep.poses, estimate.composed, sweep.calibration, sweep.frames.width,
                                  sweep.frames.height);
  return ev;
}

std::vector<SweepEvaluation> evaluate_sweeps(DualTrackModel& model, Variant variant, const std::vector<Sweep>& sweeps,
                                             const std::string& checkpoint_hash,
                                             std::vector<TrajectoryEstimate>* estimates) {
  std::vector<SweepEvaluation> out;
  for (const auto& s : sweeps) {
    const auto rel = to_params(predict_sweep(model, variant, frames_tensor(s.frames)));
    const TrajectoryEstimate e = make_estimate(s.id, rel, to_string(variant), checkpoint_hash);
    out.push_back(evaluate_estimate(s, e));
    if (estimates) estimates->push_back(e);
  }
  return out;
}

MetricsReport write_evaluation(const std::vector<SweepEvaluation>& evals, const fs::path& dir,
                               const std::string& title) {
  fs::create_directories(dir / "sweeps");
  std::vector<MetricsReport> reports;
  for (const auto& e : evals) {
    json j = e.report;
    j["sweep_id"] = e.sweep_id;
    std::ofstream(dir / "sweeps" / (e.sweep_id + ".json")) << j.dump(2);
    reports.push_back(e.report);
  }
  const MetricsReport mean = mean_report(reports);
  json summary{{"title", title},
               {"sweeps", evals.size()},
               {"gpe_mm", mean.gpe_mm},
               {"lpe_um", mean.lpe_um},
               {"fdr_percent", mean.fdr_percent},
               {"max_drift_mm", mean.max_drift_mm}};
  std::ofstream(dir / "summary.json") << summary.dump(2);
  write_ablation_table({{title, mean}}, dir / "summary.csv", dir / "summary.txt");
  return mean;
}

void write_ablation_table(const std::map<std::string, MetricsReport>& rows, const fs::path& csv, const fs::path& txt) {
  std::ofstream c(csv);
  c << "model,gpe_mm,lpe_um,fdr_percent,max_drift_mm\n" << std::setprecision(10);
  std::ofstream t(txt);
  t << std::left << std::setw(14) << "model" << std::right << std::setw(12) << "GPE (mm)" << std::setw(12)
    << "LPE (um)" << std::setw(12) << "FDR (%)" << std::setw(14) << "Max drift(mm)" << "\n";
  for (const auto& [name, r] : rows) {
    c << name << "," << r.gpe_mm << "," << r.lpe_um << "," << r.fdr_percent << "," << r.max_drift_mm << "\n";
    t << std::left << std::setw(14) << name << std::right << std::fixed << std::setprecision(3) << std::setw(12)
      << r.gpe_mm << std::setw(12) << r.lpe_um << std::setw(12) << r.fdr_percent << std::setw(14) << r.max_drift_mm
      << "\n";
  }
  require(static_cast<bool>(c) && static_cast<bool>(t), ErrorCategory::io_error, "cannot write " + csv.string());
}

std::vector<double> out_of_plane_displacement(const Trajectory& trajectory) {
  std::vector<double> z;
  const Trajectory r = rebase_trajectory(trajectory);
  for (const auto& p : r) z.push_back(p.translation().z());
  return z;
}

ReconstructionPlots write_reconstruction_plots(const Sweep& sweep, const std::vector<TrajectoryEstimate>& estimates,
                                               const fs::path& dir) {
  static const char* kColors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::vector<TrajectoryTrace> traces{{"ground truth", sweep.poses, "#222222"}};
  std::vector<double> t(sweep.poses.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  std::vector<Series> curves{{"ground truth", t, out_of_plane_displacement(sweep.poses), "#222222", true}};
  for (std::size_t k = 0; k < estimates.size(); ++k) {
    const auto& e = estimates[k];
    require(e.composed.size() == sweep.poses.size(), ErrorCategory::shape_mismatch,
            "estimate for '" + e.sweep_id + "' has " + std::to_string(e.composed.size()) + " poses, sweep has " +
                std::to_string(sweep.poses.size()));
    const std::string color = kColors[k % 5];
    traces.push_back({e.variant, e.composed, color});
    curves.push_back({e.variant, t, out_of_plane_displacement(e.composed), color, false});
  }
  ReconstructionPlots out{dir / "trajectory.svg", dir / "out_of_plane.svg"};
  write_trajectory_plot(out.ribbon, sweep.id + ": trajectory", traces, sweep.calibration, sweep.frames.width,
                        sweep.frames.height);
  write_line_plot(out.out_of_plane, sweep.id + ": out-of-plane displacement", "frame", "z (mm)", curves);
  return out;
}

}  // namespace dualtrack
