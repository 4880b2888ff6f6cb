#include "dualtrack/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dualtrack/dataset.hpp"

namespace dualtrack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMaxAttempts = 32;
constexpr double kMarginMm = 2.0;

std::string sweep_id(const std::string& split, int i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d", split.c_str(), i);
  return buf;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 step
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::map<TrajectoryFamily, int> family_counts(int total, const std::map<TrajectoryFamily, double>& mix) {
  double sum = 0.0;
  for (const auto& [f, p] : mix) {
    require(p >= 0.0, ErrorCategory::invalid_argument, "family mix: proportions must be non-negative");
    sum += p;
  }
  require(sum > 0.0, ErrorCategory::invalid_argument, "family mix: proportions sum to zero");
  std::map<TrajectoryFamily, int> counts;
  std::vector<std::pair<double, TrajectoryFamily>> remainders;
  int assigned = 0;
  for (const auto& [f, p] : mix) {
    const double exact = total * p / sum;
    counts[f] = static_cast<int>(std::floor(exact));
    assigned += counts[f];
    remainders.emplace_back(exact - std::floor(exact), f);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[remainders[i % remainders.size()].second];
  return counts;
}

Sweep generate_sweep(const GenerateConfig& config, const Phantom& phantom, TrajectoryFamily family,
                     double length_mm, double rotation_deg, std::uint64_t seed, const std::string& id) {
  const Calibration cal = default_calibration(config.width, config.height, config.pixel_spacing_mm);
  const Eigen::Vector3d e = phantom.extent_mm();
  const double half_width = (config.width - 1) * config.pixel_spacing_mm / 2.0;
  const double depth = (config.height - 1) * config.pixel_spacing_mm;

  TrajectorySpec spec;
  spec.family = family;
  spec.length_mm = length_mm;
  spec.num_frames = config.num_frames;
  spec.rotation_amplitude_deg = rotation_deg;
  spec.bounds = Eigen::AlignedBox3d(Eigen::Vector3d(half_width + kMarginMm, kMarginMm, kMarginMm),
                                    Eigen::Vector3d(e.x() - half_width - kMarginMm, e.y() - depth - kMarginMm,
                                                    e.z() - kMarginMm));

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::mt19937_64 rng(mix_seed(seed, attempt));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    PoseParams start;
    start.translation = {0.5 * e.x() + 3.0 * u(rng), 0.1 * e.y() + 1.0 * u(rng), 0.12 * e.z() + 2.5 * (1.0 + u(rng))};
    start.rotation = {3.0 * u(rng), 5.0 * u(rng), 2.0 * u(rng)};
    spec.start = params_to_matrix(start);
    spec.seed = mix_seed(seed, 1000 + attempt);
    try {
      const Trajectory traj = make_trajectory(spec);
      RenderOptions options;
      options.width = config.width;
      options.height = config.height;
      options.noise_level = config.noise_level;
      options.noise_seed = mix_seed(seed, 2000 + attempt);
      return render_sweep(phantom, traj, cal, options, id);
    } catch (const Error& err) {
      if (err.category() != ErrorCategory::generation_error) throw;
    }
  }
  fail(ErrorCategory::generation_error, "could not place sweep '" + id + "' inside the phantom");
}

std::vector<GeneratedSweepInfo> generate_dataset(const GenerateConfig& config, const fs::path& root, bool force) {
  if (fs::exists(root) && !fs::is_empty(root)) {
    require(force, ErrorCategory::refused, "output directory " + root.string() + " is not empty (use --force)");
    fs::remove_all(root);
  }
  fs::create_directories(root);
  require(config.sweeps_per_phantom >= 1, ErrorCategory::invalid_argument, "sweeps_per_phantom must be >= 1");

  std::vector<GeneratedSweepInfo> infos;
  DatasetIndex index;
  std::uint64_t phantom_counter = 0;
  // Fixed split order keeps the output independent of map ordering changes.
  const std::array<std::string, 3> split_names{"train", "val", "test"};
  for (std::uint64_t split_no = 0; split_no < split_names.size(); ++split_no) {
    const std::string& split = split_names[split_no];
    auto it = config.split_counts.find(split);
    const int count = it == config.split_counts.end() ? 0 : it->second;
    index.splits[split] = {};
    if (count <= 0) continue;

    std::vector<TrajectoryFamily> families;
    for (const auto& [f, n] : family_counts(count, config.family_mix)) families.insert(families.end(), n, f);
    std::mt19937_64 rng(mix_seed(config.seed, 500 + split_no));
    std::shuffle(families.begin(), families.end(), rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::optional<Phantom> phantom;
    std::uint64_t phantom_seed = 0;
    for (int i = 0; i < count; ++i) {
      if (i % config.sweeps_per_phantom == 0) {
        phantom_seed = mix_seed(config.seed, 10000 + phantom_counter++);
        phantom = make_phantom(phantom_seed, config.phantom_size, config.voxel_spacing_mm, config.n_landmarks);
      }
      GeneratedSweepInfo info;
      info.id = sweep_id(split, i);
      info.split = split;
      info.family = families[i];
      info.phantom_seed = phantom_seed;
      info.length_mm = config.length_range_mm[0] + (config.length_range_mm[1] - config.length_range_mm[0]) * unit(rng);
      const double rot = config.rotation_range_deg[0] +
                         (config.rotation_range_deg[1] - config.rotation_range_deg[0]) * unit(rng);
      const std::uint64_t sweep_seed = mix_seed(phantom_seed, 100 + i);
      const Sweep sweep = generate_sweep(config, *phantom, info.family, info.length_mm, rot, sweep_seed, info.id);
      save_sweep(sweep, root / info.id);
      index.splits[split].push_back(info.id);
      infos.push_back(info);
    }
  }
  save_index(index, root);

  json manifest = json::array();
  for (const auto& info : infos) {
    manifest.push_back({{"id", info.id},
                        {"split", info.split},
                        {"family", to_string(info.family)},
                        {"length_mm", info.length_mm},
                        {"phantom_seed", std::to_string(info.phantom_seed)}});
  }
  std::ofstream(root / "generation.json") << manifest.dump(2);
  return infos;
}

std::vector<GeneratedSweepInfo> load_generation_manifest(const fs::path& root) {
  std::ifstream in(root / "generation.json");
  require(static_cast<bool>(in), ErrorCategory::io_error, "missing generation.json in " + root.string());
  std::vector<GeneratedSweepInfo> out;
  try {
    const json j = json::parse(in);
    for (const auto& item : j) {
      GeneratedSweepInfo info;
      info.id = item.at("id").get<std::string>();
      info.split = item.at("split").get<std::string>();
      info.family = trajectory_family_from_string(item.at("family").get<std::string>());
      info.length_mm = item.at("length_mm").get<double>();
      info.phantom_seed = std::stoull(item.at("phantom_seed").get<std::string>());
      out.push_back(info);
    }
  } catch (const json::exception& e) {
    fail(ErrorCategory::malformed_meta, "generation.json: " + std::string(e.what()));
  }
  return out;
}

}  // namespace dualtrack
