#pragma once

// Trajectory reconstruction metrics: global/local point error over the five
// image reference points, final drift rate, and maximum drift.
//
// Every metric rebases both trajectories to T_0 = identity first, so callers
// may pass world-frame or rebased trajectories interchangeably.

#include <algorithm>
#include <array>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualtrack/error.hpp"
#include "dualtrack/geometry.hpp"

namespace dualtrack {

struct Calibration {
  Eigen::Vector2d pixel_spacing{1.0, 1.0};  // (sx, sy) mm / pixel
  Pose image_to_probe;                      // image-plane mm -> probe frame

  void validate() const {
    require(pixel_spacing.x() > 0.0 && pixel_spacing.y() > 0.0, ErrorCategory::invalid_argument,
            "calibration: pixel spacing must be positive");
    require(image_to_probe.is_valid(), ErrorCategory::invalid_argument,
            "calibration: image_to_probe is not a rigid transform");
  }

  // Pixel (u, v) -> probe-frame mm.
  Eigen::Vector3d pixel_to_probe(double u, double v) const {
    return image_to_probe.apply({u * pixel_spacing.x(), v * pixel_spacing.y(), 0.0});
  }
};

struct MetricsReport {
  double gpe_mm = 0.0;
  double lpe_um = 0.0;
  double fdr_percent = 0.0;
  double max_drift_mm = 0.0;
  std::vector<double> per_frame_drift_mm;
};

inline constexpr double kMicrometresPerMillimetre = 1000.0;

// Corners (0,0), (W-1,0), (0,H-1), (W-1,H-1) then the centre.
inline std::array<Eigen::Vector3d, 5> frame_points(const Calibration& cal, int width, int height) {
  require(width >= 2 && height >= 2, ErrorCategory::invalid_argument,
          "frame_points: image must be at least 2x2 pixels");
  cal.validate();
  const double u1 = width - 1;
  const double v1 = height - 1;
  return {cal.pixel_to_probe(0, 0), cal.pixel_to_probe(u1, 0), cal.pixel_to_probe(0, v1),
          cal.pixel_to_probe(u1, v1), cal.pixel_to_probe(u1 / 2.0, v1 / 2.0)};
}

namespace detail {

inline void require_same_length(std::span<const Pose> gt, std::span<const Pose> pred,
                                const char* what) {
  require(gt.size() == pred.size(), ErrorCategory::invalid_argument,
          std::string(what) + ": trajectory length mismatch (" + std::to_string(gt.size()) + " vs " +
              std::to_string(pred.size()) + ")");
  require(!gt.empty(), ErrorCategory::invalid_argument, std::string(what) + ": empty trajectory");
}

inline double mean_point_distance(const Pose& a, const Pose& b,
                                  const std::array<Eigen::Vector3d, 5>& points) {
  double sum = 0.0;
  for (const auto& p : points) sum += (a.apply(p) - b.apply(p)).norm();
  return sum / static_cast<double>(points.size());
}

}  // namespace detail

// mm
inline double global_point_error(std::span<const Pose> gt, std::span<const Pose> pred,
                                 const Calibration& cal, int width, int height) {
  detail::require_same_length(gt, pred, "global_point_error");
  const auto points = frame_points(cal, width, height);
  const Trajectory g = rebase_trajectory(gt);
  const Trajectory p = rebase_trajectory(pred);
  double sum = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) sum += detail::mean_point_distance(g[i], p[i], points);
  return sum / static_cast<double>(g.size());
}

// micrometres
inline double local_point_error(std::span<const Pose> gt, std::span<const Pose> pred,
                                const Calibration& cal, int width, int height) {
  detail::require_same_length(gt, pred, "local_point_error");
  require(gt.size() >= 2, ErrorCategory::invalid_argument,
          "local_point_error: needs at least two frames");
  const auto points = frame_points(cal, width, height);
  double sum = 0.0;
  for (std::size_t i = 1; i < gt.size(); ++i) {
    sum += detail::mean_point_distance(relative_transform(gt[i - 1], gt[i]),
                                       relative_transform(pred[i - 1], pred[i]), points);
  }
  return kMicrometresPerMillimetre * sum / static_cast<double>(gt.size() - 1);
}

struct DriftSeries {
  double max_mm = 0.0;
  std::vector<double> per_frame_mm;
};

inline DriftSeries max_drift(std::span<const Pose> gt, std::span<const Pose> pred) {
  detail::require_same_length(gt, pred, "max_drift");
  const Trajectory g = rebase_trajectory(gt);
  const Trajectory p = rebase_trajectory(pred);
  DriftSeries out;
  out.per_frame_mm.reserve(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.per_frame_mm.push_back((p[i].translation() - g[i].translation()).norm());
  }
  out.max_mm = *std::max_element(out.per_frame_mm.begin(), out.per_frame_mm.end());
  return out;
}

inline constexpr double kMinScanExtentMm = 1e-6;

// percent of the ground-truth start-to-end distance
inline double final_drift_rate(std::span<const Pose> gt, std::span<const Pose> pred) {
  detail::require_same_length(gt, pred, "final_drift_rate");
  require(gt.size() >= 2, ErrorCategory::invalid_argument,
          "final_drift_rate: needs at least two frames");
  const Trajectory g = rebase_trajectory(gt);
  const Trajectory p = rebase_trajectory(pred);
  const double extent = (g.back().translation() - g.front().translation()).norm();
  require(extent > kMinScanExtentMm, ErrorCategory::degenerate_scan,
          "final_drift_rate: start-to-end distance is ~0 (closed-loop scan)");
  return 100.0 * (p.back().translation() - g.back().translation()).norm() / extent;
}

inline MetricsReport evaluate_trajectory(std::span<const Pose> gt, std::span<const Pose> pred,
                                         const Calibration& cal, int width, int height) {
  MetricsReport r;
  r.gpe_mm = global_point_error(gt, pred, cal, width, height);
  r.lpe_um = local_point_error(gt, pred, cal, width, height);
  r.fdr_percent = final_drift_rate(gt, pred);
  auto drift = max_drift(gt, pred);
  r.max_drift_mm = drift.max_mm;
  r.per_frame_drift_mm = std::move(drift.per_frame_mm);
  return r;
}

// Mean of each scalar metric; per-frame series are not aggregated.
inline MetricsReport mean_report(std::span<const MetricsReport> reports) {
  MetricsReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.gpe_mm += r.gpe_mm;
    m.lpe_um += r.lpe_um;
    m.fdr_percent += r.fdr_percent;
    m.max_drift_mm += r.max_drift_mm;
  }
  const double n = static_cast<double>(reports.size());
  m.gpe_mm /= n;
  m.lpe_um /= n;
  m.fdr_percent /= n;
  m.max_drift_mm /= n;
  return m;
}

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"gpe_mm", r.gpe_mm},
                     {"lpe_um", r.lpe_um},
                     {"fdr_percent", r.fdr_percent},
                     {"max_drift_mm", r.max_drift_mm},
                     {"per_frame_drift_mm", r.per_frame_drift_mm}};
}

inline void from_json(const nlohmann::json& j, MetricsReport& r) {
  j.at("gpe_mm").get_to(r.gpe_mm);
  j.at("lpe_um").get_to(r.lpe_um);
  j.at("fdr_percent").get_to(r.fdr_percent);
  j.at("max_drift_mm").get_to(r.max_drift_mm);
  j.at("per_frame_drift_mm").get_to(r.per_frame_drift_mm);
}

}  // namespace dualtrack
