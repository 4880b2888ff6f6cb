#pragma once

// Nearest-voxel compounding of tracked frames into a 3D volume.
//
// Volume files: <name>.raw holds little-endian float32 voxels (x fastest, then
// y, then z); <name>.json holds {"shape": [nx, ny, nz], "voxel_spacing_mm",
// "origin_mm": [x, y, z], "dtype": "float32", "data_file"}.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Geometry>

#include "dualtrack/geometry.hpp"
#include "dualtrack/metrics.hpp"
#include "dualtrack/sweep.hpp"

namespace dualtrack {

struct Volume {
  std::array<int, 3> size{0, 0, 0};
  double voxel_spacing_mm = 1.0;
  Eigen::Vector3d origin_mm = Eigen::Vector3d::Zero();  // world position of voxel (0,0,0)
  std::vector<float> data;
  std::vector<std::uint8_t> written;  // 1 where some pixel landed

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * size[1] + y) * size[0] + x;
  }
  Eigen::Vector3d voxel_center(int x, int y, int z) const {
    return origin_mm + voxel_spacing_mm * Eigen::Vector3d(x, y, z);
  }
};

struct CompoundOptions {
  double voxel_spacing_mm = 0.5;
  // Restrict the volume to this box; defaults to the bounding box of all pixels.
  std::optional<Eigen::AlignedBox3d> bounds;
};

// Last write wins, frames visited in order.
Volume compound_frames(const FrameStack& frames, std::span<const Pose> poses, const Calibration& cal,
                       const CompoundOptions& options = {});

void save_volume(const Volume& volume, const std::filesystem::path& json_path);
Volume load_volume(const std::filesystem::path& json_path);

}  // namespace dualtrack
