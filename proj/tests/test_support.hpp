#pragma once

#include <random>

#include "dualtrack/geometry.hpp"

namespace dualtrack::testing {

inline PoseParams random_params(std::mt19937_64& rng, double max_pitch_deg = 85.0, double max_t = 100.0) {
  std::uniform_real_distribution<double> t(-max_t, max_t);
  std::uniform_real_distribution<double> ang(-179.999, 179.999);
  std::uniform_real_distribution<double> pitch(-max_pitch_deg, max_pitch_deg);
  PoseParams p;
  p.translation = {t(rng), t(rng), t(rng)};
  p.rotation = {ang(rng), pitch(rng), ang(rng)};
  return p;
}

inline Pose random_pose(std::mt19937_64& rng, double max_t = 100.0) {
  return params_to_matrix(random_params(rng, 89.0, max_t));
}

// Random walk with small steps, in world frame.
inline Trajectory random_trajectory(std::mt19937_64& rng, int n, double step_mm = 1.0, double step_deg = 2.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  Trajectory traj{random_pose(rng, 50.0)};
  for (int i = 1; i < n; ++i) {
    PoseParams p;
    p.translation = {step_mm * g(rng), step_mm * g(rng), step_mm * g(rng)};
    p.rotation = {step_deg * g(rng), step_deg * g(rng), step_deg * g(rng)};
    traj.push_back(traj.back() * params_to_matrix(p));
  }
  return traj;
}

}  // namespace dualtrack::testing
