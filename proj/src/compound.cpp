#include "dualtrack/compound.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dualtrack {

namespace fs = std::filesystem;

Volume compound_frames(const FrameStack& frames, std::span<const Pose> poses, const Calibration& cal,
                       const CompoundOptions& options) {
  require(frames.count >= 1, ErrorCategory::invalid_argument, "compound: no frames");
  require(poses.size() == static_cast<std::size_t>(frames.count), ErrorCategory::invalid_argument,
          "compound: estimate length does not match the sweep");
  require(options.voxel_spacing_mm > 0.0, ErrorCategory::invalid_argument, "compound: voxel spacing must be positive");
  cal.validate();

  Eigen::AlignedBox3d box;
  if (options.bounds) {
    box = *options.bounds;
  } else {
    for (int i = 0; i < frames.count; ++i) {
      for (const auto& p : frame_points(cal, frames.width, frames.height)) box.extend(poses[i].apply(p));
    }
  }
  require(!box.isEmpty(), ErrorCategory::invalid_argument, "compound: empty volume bounds");

  Volume vol;
  vol.voxel_spacing_mm = options.voxel_spacing_mm;
  vol.origin_mm = box.min();
  const Eigen::Vector3d span = box.max() - box.min();
  for (int a = 0; a < 3; ++a) {
    vol.size[a] = static_cast<int>(std::floor(span[a] / options.voxel_spacing_mm + 1e-9)) + 1;
  }
  const std::size_t total = static_cast<std::size_t>(vol.size[0]) * vol.size[1] * vol.size[2];
  vol.data.assign(total, 0.0f);
  vol.written.assign(total, 0);

  std::size_t hits = 0;
  for (int i = 0; i < frames.count; ++i) {
    for (int v = 0; v < frames.height; ++v) {
      for (int u = 0; u < frames.width; ++u) {
        const Eigen::Vector3d q = (poses[i].apply(cal.pixel_to_probe(u, v)) - vol.origin_mm) / vol.voxel_spacing_mm;
        std::array<int, 3> c{};
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
          c[a] = static_cast<int>(std::lround(q[a]));
          inside = inside && c[a] >= 0 && c[a] < vol.size[a];
        }
        if (!inside) continue;
        const std::size_t idx = vol.index(c[0], c[1], c[2]);
        vol.data[idx] = frames.at(i, v, u);
        vol.written[idx] = 1;
        ++hits;
      }
    }
  }
  require(hits > 0, ErrorCategory::invalid_argument, "compound: no frame pixel falls inside the volume bounds");
  return vol;
}

void save_volume(const Volume& volume, const fs::path& json_path) {
  if (json_path.has_parent_path()) fs::create_directories(json_path.parent_path());
  fs::path raw_path = json_path;
  raw_path.replace_extension(".raw");
  nlohmann::json meta{{"shape", volume.size},
                      {"voxel_spacing_mm", volume.voxel_spacing_mm},
                      {"origin_mm", {volume.origin_mm.x(), volume.origin_mm.y(), volume.origin_mm.z()}},
                      {"dtype", "float32"},
                      {"data_file", raw_path.filename().string()}};
  std::ofstream(json_path) << meta.dump(2);
  std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
  raw.write(reinterpret_cast<const char*>(volume.data.data()),
            static_cast<std::streamsize>(volume.data.size() * sizeof(float)));
  require(static_cast<bool>(raw), ErrorCategory::io_error, "cannot write " + raw_path.string());
}

Volume load_volume(const fs::path& json_path) {
  std::ifstream in(json_path);
  require(static_cast<bool>(in), ErrorCategory::io_error, "cannot read " + json_path.string());
  Volume vol;
  std::string data_file;
  try {
    const auto meta = nlohmann::json::parse(in);
    vol.size = meta.at("shape").get<std::array<int, 3>>();
    vol.voxel_spacing_mm = meta.at("voxel_spacing_mm").get<double>();
    const auto o = meta.at("origin_mm").get<std::array<double, 3>>();
    vol.origin_mm = {o[0], o[1], o[2]};
    data_file = meta.at("data_file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::malformed_meta, json_path.string() + ": " + e.what());
  }
  const std::size_t total = static_cast<std::size_t>(vol.size[0]) * vol.size[1] * vol.size[2];
  vol.data.resize(total);
  const fs::path raw_path = json_path.parent_path() / data_file;
  require(fs::exists(raw_path) && fs::file_size(raw_path) == total * sizeof(float), ErrorCategory::shape_mismatch,
          raw_path.string() + ": size does not match header");
  std::ifstream raw(raw_path, std::ios::binary);
  raw.read(reinterpret_cast<char*>(vol.data.data()), static_cast<std::streamsize>(total * sizeof(float)));
  return vol;
}

}  // namespace dualtrack
