#pragma once

// Rigid-transform utilities shared by every other module.
//
// Conventions (used everywhere in the repository):
//   * translations in millimetres, angles in degrees
//   * Euler angles are Z-Y-X intrinsic: R = Rz(yaw) * Ry(pitch) * Rx(roll)
//   * PoseParams::rotation stores (yaw, pitch, roll) in that application order,
//     so the flat 6-vector layout is (tx, ty, tz, yaw, pitch, roll)

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "dualtrack/error.hpp"

namespace dualtrack {

inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

// Homogeneous 4x4 rigid transform. The bottom row is always exactly (0,0,0,1).
class Pose {
 public:
  Pose() : m_(Eigen::Matrix4d::Identity()) {}

  Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
      : m_(Eigen::Matrix4d::Identity()) {
    m_.topLeftCorner<3, 3>() = rotation;
    m_.topRightCorner<3, 1>() = translation;
  }

  // Takes the top 3x4 block; the bottom row is reset.
  explicit Pose(const Eigen::Matrix4d& m) : m_(m) { m_.row(3) << 0.0, 0.0, 0.0, 1.0; }

  static Pose identity() { return {}; }

  const Eigen::Matrix4d& matrix() const { return m_; }
  Eigen::Matrix3d rotation() const { return m_.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return m_.topRightCorner<3, 1>(); }

  Pose inverse() const {
    const Eigen::Matrix3d rt = rotation().transpose();
    return Pose(rt, -rt * translation());
  }

  Pose operator*(const Pose& other) const {
    Pose out;
    out.m_.topLeftCorner<3, 3>() = rotation() * other.rotation();
    out.m_.topRightCorner<3, 1>() = rotation() * other.translation() + translation();
    return out;
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& point) const {
    return rotation() * point + translation();
  }

  // Replace R with the nearest rotation (polar decomposition via SVD).
  Pose orthonormalized() const {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation(), Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
    return Pose(u * v.transpose(), translation());
  }

  bool is_valid(double tol = 1e-9) const {
    const Eigen::Matrix3d r = rotation();
    if (!m_.allFinite()) return false;
    if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    if (std::abs(r.determinant() - 1.0) > tol) return false;
    return m_(3, 0) == 0.0 && m_(3, 1) == 0.0 && m_(3, 2) == 0.0 && m_(3, 3) == 1.0;
  }

 private:
  Eigen::Matrix4d m_;
};

using Trajectory = std::vector<Pose>;

struct PoseParams {
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();  // mm
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();     // (yaw, pitch, roll) degrees
  // Set by matrix_to_params when |pitch| is within 0.1 deg of 90.
  bool gimbal_warning = false;

  static PoseParams from_array(std::span<const double, 6> v) {
    PoseParams p;
    p.translation = {v[0], v[1], v[2]};
    p.rotation = {v[3], v[4], v[5]};
    return p;
  }

  std::array<double, 6> to_array() const {
    return {translation.x(), translation.y(), translation.z(),
            rotation.x(),    rotation.y(),    rotation.z()};
  }
};

namespace detail {

inline double wrap_degrees(double deg) {
  // Into (-180, 180].
  double w = std::remainder(deg, 360.0);
  if (w <= -180.0) w += 360.0;
  return w;
}

}  // namespace detail

inline Pose params_to_matrix(const PoseParams& p) {
  require(p.translation.allFinite() && p.rotation.allFinite(), ErrorCategory::invalid_argument,
          "params_to_matrix: non-finite pose parameters");
  const Eigen::Matrix3d r =
      (Eigen::AngleAxisd(p.rotation.x() * kDegToRad, Eigen::Vector3d::UnitZ()) *
       Eigen::AngleAxisd(p.rotation.y() * kDegToRad, Eigen::Vector3d::UnitY()) *
       Eigen::AngleAxisd(p.rotation.z() * kDegToRad, Eigen::Vector3d::UnitX()))
          .toRotationMatrix();
  return Pose(r, p.translation);
}

inline PoseParams matrix_to_params(const Pose& pose) {
  const Eigen::Matrix3d r = pose.rotation();
  PoseParams out;
  out.translation = pose.translation();

  const double cos_pitch = std::hypot(r(0, 0), r(1, 0));
  const double pitch = std::atan2(-r(2, 0), cos_pitch);
  double yaw = 0.0;
  double roll = 0.0;
  if (cos_pitch > 1e-10) {
    yaw = std::atan2(r(1, 0), r(0, 0));
    roll = std::atan2(r(2, 1), r(2, 2));
  } else {
    // Only yaw -/+ roll is observable; put everything into yaw.
    yaw = std::atan2(-r(0, 1), r(1, 1));
  }
  out.rotation = {detail::wrap_degrees(yaw * kRadToDeg), pitch * kRadToDeg,
                  detail::wrap_degrees(roll * kRadToDeg)};
  out.gimbal_warning = std::abs(std::abs(out.rotation.y()) - 90.0) < 0.1;
  return out;
}

// T_{j<-i} = T_i^-1 * T_j : pose of frame j expressed in frame i.
inline Pose relative_transform(const Pose& from, const Pose& to) { return from.inverse() * to; }

inline Trajectory compose_trajectory(std::span<const PoseParams> relatives, const Pose& start) {
  Trajectory out;
  out.reserve(relatives.size() + 1);
  out.push_back(start);
  for (const auto& rel : relatives) {
    out.push_back((out.back() * params_to_matrix(rel)).orthonormalized());
  }
  return out;
}

inline Trajectory rebase_trajectory(std::span<const Pose> trajectory) {
  require(!trajectory.empty(), ErrorCategory::invalid_argument, "rebase_trajectory: empty trajectory");
  const Pose origin_inv = trajectory.front().inverse();
  Trajectory out;
  out.reserve(trajectory.size());
  out.push_back(Pose::identity());
  for (std::size_t i = 1; i < trajectory.size(); ++i) out.push_back(origin_inv * trajectory[i]);
  return out;
}

// Adjacent relatives p_{k+1<-k}, the inverse of compose_trajectory.
inline std::vector<PoseParams> adjacent_relatives(std::span<const Pose> trajectory) {
  std::vector<PoseParams> out;
  if (trajectory.size() < 2) return out;
  out.reserve(trajectory.size() - 1);
  for (std::size_t k = 0; k + 1 < trajectory.size(); ++k) {
    out.push_back(matrix_to_params(relative_transform(trajectory[k], trajectory[k + 1])));
  }
  return out;
}

}  // namespace dualtrack
