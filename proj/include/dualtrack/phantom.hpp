#pragma once

// Procedural speckle phantom, parametric probe trajectories, and plane
// rendering. Stands in for real freehand acquisitions: band-passed noise gives
// a speckle-like texture that decorrelates with out-of-plane motion, and a
// shared anatomical template (two converging "bones", a curved vessel, random
// blobs) gives sweep-scale landmarks that break the out-of-plane sign symmetry.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "dualtrack/geometry.hpp"
#include "dualtrack/metrics.hpp"
#include "dualtrack/sweep.hpp"

namespace dualtrack {

struct Landmark {
  enum class Kind { ellipsoid, tube };

  Kind kind = Kind::ellipsoid;
  // ellipsoid: centre and semi-axes (mm).
  // tube: runs along world z; centre(z) = center.xy + slope * (z - center.z)
  //       + bend * sin(pi * z / extent_z); radius goes radii.x -> radii.y over z.
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d radii = Eigen::Vector3d::Ones();
  Eigen::Vector2d slope = Eigen::Vector2d::Zero();
  Eigen::Vector2d bend = Eigen::Vector2d::Zero();
  double intensity = 0.0;  // additive offset at the core
};

class Phantom {
 public:
  Phantom(std::array<int, 3> size, double voxel_spacing_mm);

  std::array<int, 3> size() const { return size_; }  // (nx, ny, nz)
  double voxel_spacing() const { return spacing_; }
  Eigen::Vector3d extent_mm() const;  // world coordinates of the last voxel centre

  float& voxel(int x, int y, int z) { return data_[index(x, y, z)]; }
  float voxel(int x, int y, int z) const { return data_[index(x, y, z)]; }
  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  const std::vector<Landmark>& landmarks() const { return landmarks_; }
  void set_landmarks(std::vector<Landmark> l) { landmarks_ = std::move(l); }

  bool contains(const Eigen::Vector3d& mm) const;
  // Trilinear sample at a world position (mm); caller guarantees contains().
  float sample(const Eigen::Vector3d& mm) const;

 private:
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * size_[1] + y) * size_[0] + x;
  }

  std::array<int, 3> size_;
  double spacing_;
  std::vector<float> data_;
  std::vector<Landmark> landmarks_;
};

inline constexpr double kSpeckleMean = 0.5;
inline constexpr double kSpeckleStd = 0.15;

// Deterministic in seed. n_landmarks counts template structures first (up to 3)
// then random ellipsoids.
Phantom make_phantom(std::uint64_t seed, std::array<int, 3> size, double voxel_spacing_mm,
                     int n_landmarks);
// Same speckle base, explicit landmarks.
Phantom make_phantom(std::uint64_t seed, std::array<int, 3> size, double voxel_spacing_mm,
                     const std::vector<Landmark>& landmarks);

enum class TrajectoryFamily { linear, c_shape, s_shape };

std::string to_string(TrajectoryFamily f);
TrajectoryFamily trajectory_family_from_string(const std::string& s);

struct TrajectorySpec {
  TrajectoryFamily family = TrajectoryFamily::linear;
  double length_mm = 63.0;  // elevational path length
  int num_frames = 64;
  double rotation_amplitude_deg = 0.5;  // per-step rotation scale for c/s
  std::uint64_t seed = 0;
  Pose start;
  // Box the probe origin must stay inside (world mm); unchecked when empty.
  std::optional<Eigen::AlignedBox3d> bounds;

  void validate() const;
};

Trajectory make_trajectory(const TrajectorySpec& spec);

// Image plane placement used by the generator: probe origin at the top centre
// of the image, lateral = +x, depth = +y, elevation = +z.
Calibration default_calibration(int width, int height, double pixel_spacing_mm);

struct RenderOptions {
  int width = 64;
  int height = 64;
  double noise_level = 0.05;
  std::uint64_t noise_seed = 0;
};

Sweep render_sweep(const Phantom& phantom, const Trajectory& trajectory, const Calibration& cal,
                   const RenderOptions& options, std::string id = "sweep");

}  // namespace dualtrack
