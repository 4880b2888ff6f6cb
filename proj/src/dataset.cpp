#include "dualtrack/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dualtrack {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "frames.bin is written natively as little-endian");

namespace {

constexpr const char* kPosesHeader = "tx,ty,tz,rx,ry,rz";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCategory::io_error, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorCategory::io_error, "write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCategory::io_error, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void save_sweep(const Sweep& sweep, const fs::path& dir) {
  sweep.validate();
  fs::create_directories(dir);

  json meta;
  meta["id"] = sweep.id;
  meta["shape"] = {sweep.frames.count, sweep.frames.height, sweep.frames.width};
  meta["dtype"] = "float32";
  meta["pixel_spacing_mm"] = {sweep.calibration.pixel_spacing.x(), sweep.calibration.pixel_spacing.y()};
  std::vector<double> m(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m[r * 4 + c] = sweep.calibration.image_to_probe.matrix()(r, c);
  meta["image_to_probe"] = m;
  meta["frames_file"] = "frames.bin";
  meta["poses_file"] = "poses.csv";
  write_text(dir / "meta.json", meta.dump(2));

  {
    std::ofstream out(dir / "frames.bin", std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCategory::io_error, "cannot write frames.bin in " + dir.string());
    out.write(reinterpret_cast<const char*>(sweep.frames.data.data()),
              static_cast<std::streamsize>(sweep.frames.data.size() * sizeof(float)));
    require(static_cast<bool>(out), ErrorCategory::io_error, "write failed: frames.bin");
  }

  std::string csv = std::string(kPosesHeader) + "\n";
  for (const auto& pose : sweep.poses) {
    const PoseParams p = matrix_to_params(pose);
    // Column order names the rotation axis; the vector is (yaw, pitch, roll).
    const std::array<double, 6> row{p.translation.x(), p.translation.y(), p.translation.z(),
                                    p.rotation.z(),    p.rotation.y(),    p.rotation.x()};
    for (int i = 0; i < 6; ++i) csv += format_double(row[i]) + (i < 5 ? "," : "\n");
  }
  write_text(dir / "poses.csv", csv);
}

Sweep load_sweep(const fs::path& dir) {
  Sweep sweep;
  json meta;
  try {
    meta = json::parse(read_text(dir / "meta.json"));
  } catch (const json::exception& e) {
    fail(ErrorCategory::malformed_meta, "meta.json in " + dir.string() + ": " + e.what());
  }

  std::array<int, 3> shape{};
  std::string frames_file;
  std::string poses_file;
  try {
    sweep.id = meta.value("id", dir.filename().string());
    const auto s = meta.at("shape").get<std::vector<int>>();
    require(s.size() == 3, ErrorCategory::malformed_meta, "meta.json: shape must have 3 entries");
    shape = {s[0], s[1], s[2]};
    require(meta.at("dtype").get<std::string>() == "float32", ErrorCategory::malformed_meta,
            "meta.json: dtype must be float32");
    const auto sp = meta.at("pixel_spacing_mm").get<std::vector<double>>();
    require(sp.size() == 2, ErrorCategory::malformed_meta, "meta.json: pixel_spacing_mm must have 2 entries");
    sweep.calibration.pixel_spacing = {sp[0], sp[1]};
    const auto m = meta.at("image_to_probe").get<std::vector<double>>();
    require(m.size() == 16, ErrorCategory::malformed_meta, "meta.json: image_to_probe must have 16 entries");
    Eigen::Matrix4d mat;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) mat(r, c) = m[r * 4 + c];
    sweep.calibration.image_to_probe = Pose(mat);
    frames_file = meta.at("frames_file").get<std::string>();
    poses_file = meta.at("poses_file").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCategory::malformed_meta, "meta.json in " + dir.string() + ": " + e.what());
  }
  require(shape[0] >= 1 && shape[1] >= 1 && shape[2] >= 1, ErrorCategory::malformed_meta,
          "meta.json: shape entries must be positive");

  sweep.frames = FrameStack(shape[0], shape[1], shape[2]);
  const auto expected_bytes = static_cast<std::uintmax_t>(sweep.frames.data.size() * sizeof(float));
  const fs::path frames_path = dir / frames_file;
  require(fs::exists(frames_path), ErrorCategory::io_error, "missing " + frames_path.string());
  const auto actual_bytes = fs::file_size(frames_path);
  require(actual_bytes == expected_bytes, ErrorCategory::shape_mismatch,
          frames_path.string() + ": expected " + std::to_string(expected_bytes) + " bytes, got " +
              std::to_string(actual_bytes));
  {
    std::ifstream in(frames_path, std::ios::binary);
    in.read(reinterpret_cast<char*>(sweep.frames.data.data()), static_cast<std::streamsize>(expected_bytes));
    require(static_cast<bool>(in), ErrorCategory::io_error, "read failed: " + frames_path.string());
  }

  std::istringstream csv(read_text(dir / poses_file));
  std::string line;
  std::getline(csv, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kPosesHeader, ErrorCategory::schema_error,
          "poses.csv: header must be '" + std::string(kPosesHeader) + "', got '" + line + "'");
  int row = 0;
  while (std::getline(csv, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const auto cells = split_csv(line);
    require(cells.size() == 6, ErrorCategory::schema_error,
            "poses.csv row " + std::to_string(row) + ": expected 6 columns, got " + std::to_string(cells.size()));
    std::array<double, 6> v{};
    for (int i = 0; i < 6; ++i) {
      try {
        std::size_t used = 0;
        v[i] = std::stod(cells[i], &used);
        require(used == cells[i].size(), ErrorCategory::schema_error,
                "poses.csv row " + std::to_string(row) + ": bad number '" + cells[i] + "'");
      } catch (const std::logic_error&) {
        fail(ErrorCategory::schema_error, "poses.csv row " + std::to_string(row) + ": bad number '" + cells[i] + "'");
      }
      require(std::isfinite(v[i]), ErrorCategory::non_finite,
              "poses.csv row " + std::to_string(row) + ": non-finite value");
    }
    PoseParams p;
    p.translation = {v[0], v[1], v[2]};
    p.rotation = {v[5], v[4], v[3]};
    sweep.poses.push_back(params_to_matrix(p));
  }
  require(sweep.poses.size() == static_cast<std::size_t>(shape[0]), ErrorCategory::shape_mismatch,
          "poses.csv: " + std::to_string(sweep.poses.size()) + " rows for " + std::to_string(shape[0]) + " frames");
  sweep.validate();
  return sweep;
}

const std::vector<std::string>& DatasetIndex::split(const std::string& name) const {
  auto it = splits.find(name);
  require(it != splits.end(), ErrorCategory::invalid_argument, "dataset index has no split '" + name + "'");
  return it->second;
}

void save_index(const DatasetIndex& index, const fs::path& root) {
  fs::create_directories(root);
  json j = json::object();
  for (const auto& [name, ids] : index.splits) j[name] = ids;
  write_text(root / "index.json", j.dump(2));
}

DatasetIndex load_index(const fs::path& root) {
  DatasetIndex index;
  try {
    const json j = json::parse(read_text(root / "index.json"));
    for (const auto& [name, ids] : j.items()) index.splits[name] = ids.get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCategory::malformed_meta, "index.json in " + root.string() + ": " + e.what());
  }
  return index;
}

std::vector<Sweep> load_split(const fs::path& root, const std::string& split) {
  const DatasetIndex index = load_index(root);
  std::vector<Sweep> out;
  for (const auto& id : index.split(split)) out.push_back(load_sweep(root / id));
  return out;
}

std::vector<std::array<double, 6>> relative_targets(std::span<const Pose> poses, std::span<const int> indices) {
  std::vector<std::array<double, 6>> out;
  for (std::size_t k = 0; k + 1 < indices.size(); ++k) {
    out.push_back(matrix_to_params(relative_transform(poses[indices[k]], poses[indices[k + 1]])).to_array());
  }
  return out;
}

FrameStack gather_frames(const FrameStack& in, std::span<const int> indices) {
  FrameStack out(static_cast<int>(indices.size()), in.height, in.width);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = in.frame(indices[k]);
    std::copy(src.begin(), src.end(), out.frame(static_cast<int>(k)).begin());
  }
  return out;
}

Subsequence sample_local_subsequence(const Sweep& sweep, int length, std::mt19937_64& rng) {
  const int n = sweep.size();
  require(length >= 1 && length <= n, ErrorCategory::invalid_argument,
          "sample_local_subsequence: window of " + std::to_string(length) + " frames from a sweep of " +
              std::to_string(n));
  const int start = std::uniform_int_distribution<int>(0, n - length)(rng);
  Subsequence s;
  s.frame_indices.resize(length);
  std::iota(s.frame_indices.begin(), s.frame_indices.end(), start);
  s.frames = gather_frames(sweep.frames, s.frame_indices);
  s.targets = relative_targets(sweep.poses, s.frame_indices);
  return s;
}

Subsequence sample_global_subsequence(const Sweep& sweep, int count, std::mt19937_64& rng, int out_height,
                                      int out_width) {
  const int n = sweep.size();
  require(count >= 2 && count <= n, ErrorCategory::invalid_argument,
          "sample_global_subsequence: cannot draw " + std::to_string(count) + " frames from " + std::to_string(n));
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  Subsequence s;
  s.frame_indices.reserve(count);
  // Selection sampling keeps the input order, so indices come out sorted.
  std::sample(all.begin(), all.end(), std::back_inserter(s.frame_indices), count, rng);
  s.frames = area_resize(gather_frames(sweep.frames, s.frame_indices), out_height, out_width);
  s.targets = relative_targets(sweep.poses, s.frame_indices);
  return s;
}

std::vector<int> subsample_evenly(int num_frames, int stride) {
  require(stride >= 1, ErrorCategory::invalid_argument, "subsample_evenly: stride must be >= 1");
  require(num_frames >= 1, ErrorCategory::invalid_argument, "subsample_evenly: empty sweep");
  std::vector<int> out;
  for (int i = 0; i < num_frames; i += stride) out.push_back(i);
  if (out.back() != num_frames - 1) out.push_back(num_frames - 1);
  return out;
}

namespace {

// weights[o] = list of (input index, weight) covering output cell o.
std::vector<std::vector<std::pair<int, double>>> area_weights(int in, int out) {
  std::vector<std::vector<std::pair<int, double>>> w(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double lo = o * scale;
    const double hi = (o + 1) * scale;
    for (int i = static_cast<int>(std::floor(lo)); i < static_cast<int>(std::ceil(hi)) && i < in; ++i) {
      const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (overlap > 0.0) w[o].emplace_back(i, overlap / scale);
    }
  }
  return w;
}

}  // namespace

FrameStack area_resize(const FrameStack& in, int out_height, int out_width) {
  require(out_height >= 1 && out_width >= 1, ErrorCategory::invalid_argument, "area_resize: bad output size");
  if (out_height == in.height && out_width == in.width) return in;
  const auto wy = area_weights(in.height, out_height);
  const auto wx = area_weights(in.width, out_width);
  FrameStack out(in.count, out_height, out_width);
  for (int f = 0; f < in.count; ++f) {
    for (int y = 0; y < out_height; ++y) {
      for (int x = 0; x < out_width; ++x) {
        double acc = 0.0;
        for (const auto& [iy, ay] : wy[y])
          for (const auto& [ix, ax] : wx[x]) acc += ay * ax * in.at(f, iy, ix);
        out.at(f, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace dualtrack
