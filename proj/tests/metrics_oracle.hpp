#pragma once

// Naive reference metrics on raw 4x4 matrices. Deliberately shares no code
// with dualtrack/metrics.hpp: general matrix inverse, explicit point list,
// straight loops.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace dualtrack::oracle {

using Mat = Eigen::Matrix4d;

struct Frame {
  double sx, sy;
  Mat image_to_probe;
  int width, height;
};

inline std::vector<Eigen::Vector4d> points(const Frame& f) {
  const double us[5] = {0.0, f.width - 1.0, 0.0, f.width - 1.0, (f.width - 1.0) / 2.0};
  const double vs[5] = {0.0, 0.0, f.height - 1.0, f.height - 1.0, (f.height - 1.0) / 2.0};
  std::vector<Eigen::Vector4d> out;
  for (int k = 0; k < 5; ++k) out.push_back(f.image_to_probe * Eigen::Vector4d(us[k] * f.sx, vs[k] * f.sy, 0.0, 1.0));
  return out;
}

inline std::vector<Mat> rebase(const std::vector<Mat>& t) {
  std::vector<Mat> out;
  const Mat inv = t[0].inverse();
  for (const auto& m : t) out.push_back(inv * m);
  return out;
}

inline double gpe(const std::vector<Mat>& gt_in, const std::vector<Mat>& pred_in, const Frame& f) {
  const auto gt = rebase(gt_in), pred = rebase(pred_in);
  const auto pts = points(f);
  double total = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (const auto& p : pts) {
      total += (gt[i] * p - pred[i] * p).norm();
      ++count;
    }
  }
  return total / count;
}

inline double lpe_um(const std::vector<Mat>& gt, const std::vector<Mat>& pred, const Frame& f) {
  const auto pts = points(f);
  double total = 0.0;
  int count = 0;
  for (std::size_t i = 1; i < gt.size(); ++i) {
    const Mat a = gt[i - 1].inverse() * gt[i];
    const Mat b = pred[i - 1].inverse() * pred[i];
    for (const auto& p : pts) {
      total += (a * p - b * p).norm();
      ++count;
    }
  }
  return 1000.0 * total / count;
}

inline std::vector<double> drift(const std::vector<Mat>& gt_in, const std::vector<Mat>& pred_in) {
  const auto gt = rebase(gt_in), pred = rebase(pred_in);
  std::vector<double> out;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double dx = gt[i](0, 3) - pred[i](0, 3);
    const double dy = gt[i](1, 3) - pred[i](1, 3);
    const double dz = gt[i](2, 3) - pred[i](2, 3);
    out.push_back(std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  return out;
}

inline double max_drift(const std::vector<Mat>& gt, const std::vector<Mat>& pred) {
  const auto d = drift(gt, pred);
  return *std::max_element(d.begin(), d.end());
}

inline double fdr_percent(const std::vector<Mat>& gt_in, const std::vector<Mat>& pred_in) {
  const auto gt = rebase(gt_in), pred = rebase(pred_in);
  const auto n = gt.size() - 1;
  const Eigen::Vector3d end_gt = gt[n].block<3, 1>(0, 3);
  const Eigen::Vector3d end_pred = pred[n].block<3, 1>(0, 3);
  const Eigen::Vector3d start_gt = gt[0].block<3, 1>(0, 3);
  return 100.0 * (end_pred - end_gt).norm() / (end_gt - start_gt).norm();
}

}  // namespace dualtrack::oracle
