#include "dualtrack/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace dualtrack {

namespace {

constexpr double kLowSigmaVoxels = 0.8;
constexpr double kHighSigmaVoxels = 2.5;
constexpr double kEdgeMm = 1.0;

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

int reflect(int i, int n) {
  if (i < 0) i = -i - 1;
  if (i >= n) i = 2 * n - i - 1;
  return std::clamp(i, 0, n - 1);
}

// Separable blur of a (nx, ny, nz) x-fastest volume along all three axes.
std::vector<double> blur3d(const std::vector<double>& in, std::array<int, 3> n, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> a = in;
  std::vector<double> b(in.size());
  const std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(n[0]),
                                          static_cast<std::size_t>(n[0]) * n[1]};
  for (int axis = 0; axis < 3; ++axis) {
    for (int z = 0; z < n[2]; ++z) {
      for (int y = 0; y < n[1]; ++y) {
        for (int x = 0; x < n[0]; ++x) {
          const std::array<int, 3> pos{x, y, z};
          const std::size_t base = x + stride[1] * y + stride[2] * z;
          const std::size_t origin = base - stride[axis] * pos[axis];
          double acc = 0.0;
          for (int t = -r; t <= r; ++t) {
            acc += k[t + r] * a[origin + stride[axis] * reflect(pos[axis] + t, n[axis])];
          }
          b[base] = acc;
        }
      }
    }
    std::swap(a, b);
  }
  return a;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double landmark_weight(const Landmark& l, const Eigen::Vector3d& p, const Eigen::Vector3d& extent) {
  if (l.kind == Landmark::Kind::ellipsoid) {
    const Eigen::Vector3d q = (p - l.center).cwiseQuotient(l.radii);
    const double d = q.norm();
    return sigmoid((1.0 - d) * l.radii.minCoeff() / kEdgeMm);
  }
  const double zf = extent.z() > 0.0 ? p.z() / extent.z() : 0.0;
  const Eigen::Vector2d axis = l.center.head<2>() + l.slope * (p.z() - l.center.z()) +
                               l.bend * std::sin(std::numbers::pi * zf);
  const double radius = l.radii.x() + (l.radii.y() - l.radii.x()) * zf;
  const double dist = (p.head<2>() - axis).norm();
  return sigmoid((radius - dist) / kEdgeMm);
}

void paint_landmarks(Phantom& phantom) {
  const auto n = phantom.size();
  const double s = phantom.voxel_spacing();
  const Eigen::Vector3d extent = phantom.extent_mm();
  for (int z = 0; z < n[2]; ++z) {
    for (int y = 0; y < n[1]; ++y) {
      for (int x = 0; x < n[0]; ++x) {
        const Eigen::Vector3d p(x * s, y * s, z * s);
        double v = phantom.voxel(x, y, z);
        for (const auto& l : phantom.landmarks()) v += l.intensity * landmark_weight(l, p, extent);
        phantom.voxel(x, y, z) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

Phantom speckle_base(std::uint64_t seed, std::array<int, 3> size, double spacing) {
  Phantom phantom(size, spacing);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> noise(phantom.data().size());
  for (double& v : noise) v = normal(rng);

  const auto fine = blur3d(noise, size, kLowSigmaVoxels);
  const auto coarse = blur3d(noise, size, kHighSigmaVoxels);
  std::vector<double> band(noise.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < band.size(); ++i) {
    band[i] = fine[i] - coarse[i];
    mean += band[i];
  }
  mean /= static_cast<double>(band.size());
  double var = 0.0;
  for (double v : band) var += (v - mean) * (v - mean);
  const double stddev = std::sqrt(var / static_cast<double>(band.size()));

  auto& out = phantom.data();
  for (std::size_t i = 0; i < band.size(); ++i) {
    const double unit = (band[i] - mean) / stddev;
    out[i] = static_cast<float>(kSpeckleMean + kSpeckleStd * unit);
  }
  return phantom;
}

// Shared anatomy: two converging bright tubes, one curved dark tube, then
// random blobs. Positions are fractions of the extent, jittered per phantom.
std::vector<Landmark> template_landmarks(std::mt19937_64& rng, const Eigen::Vector3d& e, int count) {
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto j = [&](double scale) { return scale * jitter(rng); };
  const double sep_start = 0.22 * e.x();
  const double sep_end = 0.08 * e.x();
  const double converge = (sep_start - sep_end) / 2.0 / e.z();

  std::vector<Landmark> out;
  for (int i = 0; i < count; ++i) {
    Landmark l;
    switch (i) {
      case 0:
        l.kind = Landmark::Kind::tube;
        l.center = {0.5 * e.x() - sep_start / 2.0 + j(0.02 * e.x()), 0.28 * e.y() + j(0.01 * e.y()), 0.0};
        l.slope = {converge, 0.0};
        l.radii = {0.07 * e.x() * (1.0 + j(0.1)), 0.04 * e.x() * (1.0 + j(0.1)), 0.0};
        l.intensity = 0.35;
        break;
      case 1:
        l.kind = Landmark::Kind::tube;
        l.center = {0.5 * e.x() + sep_start / 2.0 + j(0.02 * e.x()), 0.31 * e.y() + j(0.01 * e.y()), 0.0};
        l.slope = {-converge, 0.0};
        l.radii = {0.05 * e.x() * (1.0 + j(0.1)), 0.035 * e.x() * (1.0 + j(0.1)), 0.0};
        l.intensity = 0.3;
        break;
      case 2: {
        l.kind = Landmark::Kind::tube;
        l.center = {0.5 * e.x() + j(0.02 * e.x()), 0.18 * e.y() + j(0.01 * e.y()), 0.0};
        l.bend = {0.08 * e.x() * (1.0 + j(0.2)), 0.0};
        const double r = 0.025 * e.x() * (1.0 + j(0.15));
        l.radii = {r, r, 0.0};
        l.intensity = -0.3;
        break;
      }
      default: {
        l.kind = Landmark::Kind::ellipsoid;
        l.center = {(0.2 + 0.6 * unit(rng)) * e.x(), (0.12 + 0.23 * unit(rng)) * e.y(), unit(rng) * e.z()};
        l.radii = {2.0 + 4.0 * unit(rng), 2.0 + 4.0 * unit(rng), 2.0 + 4.0 * unit(rng)};
        const double magnitude = 0.15 + 0.15 * unit(rng);
        l.intensity = unit(rng) < 0.5 ? -magnitude : magnitude;
        break;
      }
    }
    out.push_back(l);
  }
  return out;
}

}  // namespace

Phantom::Phantom(std::array<int, 3> size, double voxel_spacing_mm)
    : size_(size), spacing_(voxel_spacing_mm) {
  require(size[0] >= 32 && size[1] >= 32 && size[2] >= 32, ErrorCategory::invalid_argument,
          "phantom: every dimension needs at least 32 voxels");
  require(voxel_spacing_mm > 0.0, ErrorCategory::invalid_argument, "phantom: voxel spacing must be positive");
  data_.assign(static_cast<std::size_t>(size[0]) * size[1] * size[2], 0.0f);
}

Eigen::Vector3d Phantom::extent_mm() const {
  return {(size_[0] - 1) * spacing_, (size_[1] - 1) * spacing_, (size_[2] - 1) * spacing_};
}

bool Phantom::contains(const Eigen::Vector3d& mm) const {
  const Eigen::Vector3d e = extent_mm();
  return mm.x() >= 0.0 && mm.y() >= 0.0 && mm.z() >= 0.0 && mm.x() <= e.x() && mm.y() <= e.y() &&
         mm.z() <= e.z();
}

float Phantom::sample(const Eigen::Vector3d& mm) const {
  const Eigen::Vector3d c = mm / spacing_;
  std::array<int, 3> i0{};
  std::array<double, 3> f{};
  for (int a = 0; a < 3; ++a) {
    const int lo = std::clamp(static_cast<int>(std::floor(c[a])), 0, size_[a] - 2);
    i0[a] = lo;
    f[a] = c[a] - lo;
  }
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
        acc += w * voxel(i0[0] + dx, i0[1] + dy, i0[2] + dz);
      }
    }
  }
  return static_cast<float>(acc);
}

Phantom make_phantom(std::uint64_t seed, std::array<int, 3> size, double voxel_spacing_mm,
                     int n_landmarks) {
  Phantom phantom = speckle_base(seed, size, voxel_spacing_mm);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  phantom.set_landmarks(template_landmarks(rng, phantom.extent_mm(), std::max(n_landmarks, 0)));
  paint_landmarks(phantom);
  return phantom;
}

Phantom make_phantom(std::uint64_t seed, std::array<int, 3> size, double voxel_spacing_mm,
                     const std::vector<Landmark>& landmarks) {
  Phantom phantom = speckle_base(seed, size, voxel_spacing_mm);
  phantom.set_landmarks(landmarks);
  paint_landmarks(phantom);
  return phantom;
}

std::string to_string(TrajectoryFamily f) {
  switch (f) {
    case TrajectoryFamily::linear: return "linear";
    case TrajectoryFamily::c_shape: return "c-shape";
    case TrajectoryFamily::s_shape: return "s-shape";
  }
  return "linear";
}

TrajectoryFamily trajectory_family_from_string(const std::string& s) {
  if (s == "linear") return TrajectoryFamily::linear;
  if (s == "c-shape" || s == "c_shape") return TrajectoryFamily::c_shape;
  if (s == "s-shape" || s == "s_shape") return TrajectoryFamily::s_shape;
  fail(ErrorCategory::invalid_argument, "unknown trajectory family '" + s + "'");
}

void TrajectorySpec::validate() const {
  require(num_frames >= 2, ErrorCategory::invalid_argument, "trajectory: num_frames must be >= 2");
  require(length_mm > 0.0 && std::isfinite(length_mm), ErrorCategory::invalid_argument,
          "trajectory: length_mm must be positive");
  require(std::isfinite(rotation_amplitude_deg), ErrorCategory::invalid_argument,
          "trajectory: rotation amplitude must be finite");
}

Trajectory make_trajectory(const TrajectorySpec& spec) {
  spec.validate();
  const int steps = spec.num_frames - 1;
  const double v = spec.length_mm / steps;
  const double amp = spec.rotation_amplitude_deg;
  constexpr double pi = std::numbers::pi;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double curve_sign = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5 ? -1.0 : 1.0;

  std::vector<PoseParams> rel(steps);
  Eigen::Vector3d t_noise = Eigen::Vector3d::Zero();
  Eigen::Vector3d r_noise = Eigen::Vector3d::Zero();
  for (int k = 0; k < steps; ++k) {
    const double t = steps > 1 ? static_cast<double>(k) / (steps - 1) : 0.0;
    PoseParams& p = rel[k];
    if (spec.family == TrajectoryFamily::linear) {
      p.translation = {0.0, 0.0, v};
      continue;
    }
    // Smooth AR(1) perturbations.
    for (int a = 0; a < 3; ++a) {
      t_noise[a] = 0.8 * t_noise[a] + 0.2 * normal(rng);
      r_noise[a] = 0.8 * r_noise[a] + 0.2 * normal(rng);
    }
    if (spec.family == TrajectoryFamily::c_shape) {
      p.translation = v * Eigen::Vector3d(0.0, 0.0, 1.0);
      // (yaw about probe z = in-plane, pitch about probe y = heading, roll about x = tilt)
      p.rotation = {0.3 * amp * std::sin(pi * t), curve_sign * amp * (0.6 + 0.4 * std::sin(pi * t)), 0.0};
    } else {
      const double phase = 3.0 * pi * t;
      p.translation = v * Eigen::Vector3d(0.35 * std::sin(phase), 0.0, 0.35 + 0.65 * std::cos(phase));
      p.rotation = {0.3 * amp * std::sin(phase), curve_sign * amp * std::sin(2.0 * pi * t), 0.0};
    }
    p.translation += 0.05 * v * t_noise;
    p.rotation += 0.1 * std::abs(amp) * r_noise;
  }

  double max_step = 0.0;
  for (const auto& p : rel) max_step = std::max(max_step, p.translation.norm());
  if (max_step > 1.0) {
    for (auto& p : rel) p.translation /= max_step;
  }
  for (const auto& p : rel) {
    const double m = p.translation.norm();
    require(m >= 0.1 - 1e-12 && m <= 1.0 + 1e-12, ErrorCategory::generation_error,
            "trajectory: adjacent translation " + std::to_string(m) + " mm outside [0.1, 1.0]");
  }

  Trajectory traj = compose_trajectory(rel, spec.start);
  if (spec.bounds) {
    for (std::size_t i = 0; i < traj.size(); ++i) {
      require(spec.bounds->contains(traj[i].translation()), ErrorCategory::generation_error,
              "trajectory: probe leaves the phantom bounds at frame " + std::to_string(i));
    }
  }
  return traj;
}

Calibration default_calibration(int width, int height, double pixel_spacing_mm) {
  require(width >= 2 && height >= 2 && pixel_spacing_mm > 0.0, ErrorCategory::invalid_argument,
          "calibration: bad image geometry");
  Calibration cal;
  cal.pixel_spacing = {pixel_spacing_mm, pixel_spacing_mm};
  cal.image_to_probe =
      Pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d(-(width - 1) * pixel_spacing_mm / 2.0, 0.0, 0.0));
  return cal;
}

Sweep render_sweep(const Phantom& phantom, const Trajectory& trajectory, const Calibration& cal,
                   const RenderOptions& options, std::string id) {
  require(options.width >= 2 && options.height >= 2, ErrorCategory::invalid_argument,
          "render_sweep: image must be at least 2x2");
  require(!trajectory.empty(), ErrorCategory::invalid_argument, "render_sweep: empty trajectory");
  cal.validate();

  const int w = options.width;
  const int h = options.height;
  Sweep sweep;
  sweep.id = std::move(id);
  sweep.frames = FrameStack(static_cast<int>(trajectory.size()), h, w);
  sweep.poses = trajectory;
  sweep.calibration = cal;

  const auto corners = frame_points(cal, w, h);
  std::mt19937_64 rng(options.noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (int i = 0; i < static_cast<int>(trajectory.size()); ++i) {
    const Pose& pose = trajectory[i];
    for (int c = 0; c < 4; ++c) {
      require(phantom.contains(pose.apply(corners[c])), ErrorCategory::generation_error,
              "render_sweep: frame " + std::to_string(i) + " leaves the phantom volume");
    }
    auto frame = sweep.frames.frame(i);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        double value = phantom.sample(pose.apply(cal.pixel_to_probe(u, v)));
        if (options.noise_level > 0.0) value *= 1.0 + options.noise_level * normal(rng);
        frame[static_cast<std::size_t>(v) * w + u] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return sweep;
}

}  // namespace dualtrack
