#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dualtrack/datagen.hpp"
#include "dualtrack/dataset.hpp"
#include "test_support.hpp"

namespace dualtrack {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("dualtrack_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Sweep random_sweep(std::mt19937_64& rng, int n = 12, int h = 8, int w = 6) {
  Sweep s;
  s.id = "random";
  s.frames = FrameStack(n, h, w);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : s.frames.data) v = u(rng);
  s.poses = testing::random_trajectory(rng, n, 2.0, 5.0);
  s.calibration.pixel_spacing = {0.3, 0.45};
  s.calibration.image_to_probe = testing::random_pose(rng, 10.0);
  return s;
}

double max_abs(const Pose& a, const Pose& b) { return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff(); }

template <typename F>
ErrorCategory category_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCategory::io_error;
}

TEST(SweepIo, RoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(1);
  const Sweep s = random_sweep(rng);
  save_sweep(s, dir.path() / "s");
  const Sweep back = load_sweep(dir.path() / "s");
  EXPECT_EQ(back.id, s.id);
  EXPECT_EQ(back.frames.count, s.frames.count);
  EXPECT_EQ(back.frames.height, s.frames.height);
  EXPECT_EQ(back.frames.width, s.frames.width);
  EXPECT_EQ(0, std::memcmp(back.frames.data.data(), s.frames.data.data(), s.frames.data.size() * sizeof(float)));
  ASSERT_EQ(back.poses.size(), s.poses.size());
  for (std::size_t i = 0; i < s.poses.size(); ++i) EXPECT_LT(max_abs(back.poses[i], s.poses[i]), 1e-12);
  EXPECT_EQ(back.calibration.pixel_spacing, s.calibration.pixel_spacing);
  EXPECT_LT(max_abs(back.calibration.image_to_probe, s.calibration.image_to_probe), 1e-15);
}

TEST(SweepIo, PoseColumnsNameTheirAxes) {
  TempDir dir;
  std::mt19937_64 rng(2);
  Sweep s = random_sweep(rng, 2);
  s.poses[0] = params_to_matrix(PoseParams::from_array(std::array<double, 6>{1, 2, 3, 30, 20, 10}));
  save_sweep(s, dir.path());
  std::ifstream in(dir.path() / "poses.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "tx,ty,tz,rx,ry,rz");
  std::stringstream ss(row);
  std::vector<double> v;
  for (std::string cell; std::getline(ss, cell, ',');) v.push_back(std::stod(cell));
  ASSERT_EQ(v.size(), 6u);
  EXPECT_NEAR(v[3], 10.0, 1e-9);  // roll about x
  EXPECT_NEAR(v[4], 20.0, 1e-9);  // pitch about y
  EXPECT_NEAR(v[5], 30.0, 1e-9);  // yaw about z
}

TEST(SweepIo, TruncatedFramesReportsByteCounts) {
  TempDir dir;
  std::mt19937_64 rng(3);
  const Sweep s = random_sweep(rng);
  save_sweep(s, dir.path());
  fs::resize_file(dir.path() / "frames.bin", 100);
  try {
    load_sweep(dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::shape_mismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(s.frames.data.size() * 4)), std::string::npos) << msg;
    EXPECT_NE(msg.find("100"), std::string::npos) << msg;
  }
}

TEST(SweepIo, FiveColumnPosesIsSchemaError) {
  TempDir dir;
  std::mt19937_64 rng(4);
  save_sweep(random_sweep(rng, 3), dir.path());
  std::ofstream(dir.path() / "poses.csv") << "tx,ty,tz,rx,ry,rz\n1,2,3,4,5\n1,2,3,4,5\n1,2,3,4,5\n";
  EXPECT_EQ(category_of([&] { load_sweep(dir.path()); }), ErrorCategory::schema_error);
}

TEST(SweepIo, MalformedMetaAndNonFinitePoses) {
  TempDir dir;
  std::mt19937_64 rng(5);
  save_sweep(random_sweep(rng, 3), dir.path() / "a");
  std::ofstream(dir.path() / "a" / "meta.json") << "{ not json";
  EXPECT_EQ(category_of([&] { load_sweep(dir.path() / "a"); }), ErrorCategory::malformed_meta);

  save_sweep(random_sweep(rng, 3), dir.path() / "b");
  std::ofstream(dir.path() / "b" / "poses.csv") << "tx,ty,tz,rx,ry,rz\n1,2,3,4,5,6\nnan,0,0,0,0,0\n1,2,3,4,5,6\n";
  EXPECT_EQ(category_of([&] { load_sweep(dir.path() / "b"); }), ErrorCategory::non_finite);

  save_sweep(random_sweep(rng, 3), dir.path() / "c");
  std::ofstream(dir.path() / "c" / "poses.csv") << "tx,ty,tz,rx,ry,rz\n1,2,3,4,5,6\n";
  EXPECT_EQ(category_of([&] { load_sweep(dir.path() / "c"); }), ErrorCategory::shape_mismatch);
}

TEST(LocalSampler, FullLengthWindow) {
  std::mt19937_64 rng(6);
  const Sweep s = random_sweep(rng, 10);
  const Subsequence sub = sample_local_subsequence(s, 10, rng);
  EXPECT_EQ(sub.frame_indices.front(), 0);
  EXPECT_EQ(sub.frames.data, s.frames.data);
  EXPECT_EQ(sub.targets.size(), 9u);
}

TEST(LocalSampler, ContiguousWindowWithGroundTruthTargets) {
  std::mt19937_64 rng(7);
  const Sweep s = random_sweep(rng, 64, 4, 4);
  const auto gt_rel = adjacent_relatives(s.poses);
  for (int trial = 0; trial < 20; ++trial) {
    const Subsequence sub = sample_local_subsequence(s, 16, rng);
    ASSERT_EQ(sub.frame_indices.size(), 16u);
    ASSERT_EQ(sub.frames.count, 16);
    for (int k = 1; k < 16; ++k) ASSERT_EQ(sub.frame_indices[k], sub.frame_indices[k - 1] + 1);
    for (int k = 0; k < 15; ++k) {
      const auto expected = gt_rel[sub.frame_indices[k]].to_array();
      for (int c = 0; c < 6; ++c) ASSERT_NEAR(sub.targets[k][c], expected[c], 1e-12);
    }
    const auto first = s.frames.frame(sub.frame_indices[0]);
    EXPECT_TRUE(std::equal(first.begin(), first.end(), sub.frames.frame(0).begin()));
  }
}

TEST(LocalSampler, SeededAndRejectsShortSweeps) {
  std::mt19937_64 rng(8);
  const Sweep s = random_sweep(rng, 40, 2, 2);
  std::mt19937_64 a(99), b(99);
  EXPECT_EQ(sample_local_subsequence(s, 16, a).frame_indices, sample_local_subsequence(s, 16, b).frame_indices);
  EXPECT_EQ(category_of([&] { sample_local_subsequence(s, 41, a); }), ErrorCategory::invalid_argument);
}

TEST(LocalSampler, CoversEveryStart) {
  std::mt19937_64 rng(9);
  const Sweep s = random_sweep(rng, 64, 2, 2);
  const int starts = 64 - 16 + 1;
  std::vector<int> hist(starts, 0);
  const int draws = 1000;
  for (int i = 0; i < draws; ++i) ++hist[sample_local_subsequence(s, 16, rng).frame_indices[0]];
  double chi2 = 0.0;
  const double expected = static_cast<double>(draws) / starts;
  for (int h : hist) {
    EXPECT_GT(h, 0);
    chi2 += (h - expected) * (h - expected) / expected;
  }
  // 48 dof: the p = 0.001 critical value is 84.0.
  EXPECT_LT(chi2, 84.0);
}

TEST(GlobalSampler, PairTargetIsDirectRelative) {
  std::mt19937_64 rng(10);
  const Sweep s = random_sweep(rng, 30, 8, 8);
  const Subsequence sub = sample_global_subsequence(s, 2, rng, 4, 4);
  ASSERT_EQ(sub.targets.size(), 1u);
  const auto expected =
      matrix_to_params(relative_transform(s.poses[sub.frame_indices[0]], s.poses[sub.frame_indices[1]])).to_array();
  for (int c = 0; c < 6; ++c) EXPECT_NEAR(sub.targets[0][c], expected[c], 1e-12);
  EXPECT_EQ(sub.frames.height, 4);
  EXPECT_EQ(sub.frames.width, 4);
}

TEST(GlobalSampler, FullCountIsContiguous) {
  std::mt19937_64 rng(11);
  const Sweep s = random_sweep(rng, 20, 4, 4);
  const Subsequence sub = sample_global_subsequence(s, 20, rng, 4, 4);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(sub.frame_indices[k], k);
  EXPECT_EQ(sub.frames.data, s.frames.data);
  EXPECT_EQ(category_of([&] { sample_global_subsequence(s, 21, rng, 4, 4); }), ErrorCategory::invalid_argument);
}

TEST(GlobalSampler, TargetsComposeBackToEndpoints) {
  std::mt19937_64 rng(12);
  const Sweep s = random_sweep(rng, 64, 8, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const Subsequence sub = sample_global_subsequence(s, 12, rng, 4, 4);
    for (std::size_t k = 1; k < sub.frame_indices.size(); ++k) ASSERT_LT(sub.frame_indices[k - 1], sub.frame_indices[k]);
    for (std::size_t k = 0; k < sub.targets.size(); ++k) {
      const auto expected = matrix_to_params(
          s.poses[sub.frame_indices[k]].inverse() * s.poses[sub.frame_indices[k + 1]]).to_array();
      for (int c = 0; c < 6; ++c) ASSERT_NEAR(sub.targets[k][c], expected[c], 1e-9);
    }
    std::vector<PoseParams> rel;
    for (const auto& t : sub.targets) rel.push_back(PoseParams::from_array(t));
    const Trajectory re = compose_trajectory(rel, s.poses[sub.frame_indices[0]]);
    ASSERT_LT((re.back().translation() - s.poses[sub.frame_indices.back()].translation()).norm(), 1e-6);
  }
}

TEST(SubsampleEvenly, Rules) {
  EXPECT_EQ(subsample_evenly(5, 1), (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ(subsample_evenly(17, 8), (std::vector<int>{0, 8, 16}));
  EXPECT_EQ(subsample_evenly(20, 8), (std::vector<int>{0, 8, 16, 19}));
  EXPECT_EQ(subsample_evenly(64, 64), (std::vector<int>{0, 63}));
  EXPECT_EQ(subsample_evenly(1, 8), (std::vector<int>{0}));
  EXPECT_THROW(subsample_evenly(10, 0), Error);
}

TEST(AreaResize, BlockMeanAndShape) {
  FrameStack f(2, 4, 6);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = static_cast<float>(i % 7) / 7.0f;
  const FrameStack half = area_resize(f, 2, 3);
  ASSERT_EQ(half.count, 2);
  ASSERT_EQ(half.height, 2);
  ASSERT_EQ(half.width, 3);
  for (int k = 0; k < 2; ++k)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 3; ++x) {
        const double mean = (f.at(k, 2 * y, 2 * x) + f.at(k, 2 * y, 2 * x + 1) + f.at(k, 2 * y + 1, 2 * x) +
                             f.at(k, 2 * y + 1, 2 * x + 1)) / 4.0;
        EXPECT_NEAR(half.at(k, y, x), mean, 1e-6);
      }
  EXPECT_EQ(area_resize(f, 3, 5).data, area_resize(f, 3, 5).data);
  const FrameStack odd = area_resize(f, 3, 5);
  EXPECT_EQ(odd.height, 3);
  EXPECT_EQ(odd.width, 5);
}

TEST(AreaResize, PreservesConstantAndMean) {
  FrameStack f(1, 9, 7);
  std::fill(f.data.begin(), f.data.end(), 0.25f);
  for (float v : area_resize(f, 4, 3).data) EXPECT_NEAR(v, 0.25f, 1e-6);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<float> u(0, 1);
  for (float& v : f.data) v = u(rng);
  const double before = std::accumulate(f.data.begin(), f.data.end(), 0.0) / f.data.size();
  const FrameStack r = area_resize(f, 4, 3);
  const double after = std::accumulate(r.data.begin(), r.data.end(), 0.0) / r.data.size();
  EXPECT_NEAR(before, after, 1e-6);
}

GenerateConfig tiny_config() {
  GenerateConfig cfg;
  cfg.split_counts = {{"train", 5}, {"val", 2}, {"test", 3}};
  cfg.num_frames = 12;
  cfg.width = cfg.height = 16;
  cfg.phantom_size = {48, 48, 48};
  cfg.length_range_mm = {5.0, 10.0};
  cfg.sweeps_per_phantom = 3;
  return cfg;
}

TEST(GenerateDataset, WritesSplitsDeterministically) {
  TempDir a, b;
  const auto cfg = tiny_config();
  const auto infos = generate_dataset(cfg, a.path() / "ds", false);
  generate_dataset(cfg, b.path() / "ds", false);
  EXPECT_EQ(infos.size(), 10u);
  const DatasetIndex index = load_index(a.path() / "ds");
  EXPECT_EQ(index.split("train").size(), 5u);
  EXPECT_EQ(index.split("val").size(), 2u);
  EXPECT_EQ(index.split("test").size(), 3u);
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(bytes(a.path() / "ds" / "index.json"), bytes(b.path() / "ds" / "index.json"));
  for (const auto& info : infos) {
    EXPECT_EQ(bytes(a.path() / "ds" / info.id / "frames.bin"), bytes(b.path() / "ds" / info.id / "frames.bin"));
    EXPECT_EQ(bytes(a.path() / "ds" / info.id / "poses.csv"), bytes(b.path() / "ds" / info.id / "poses.csv"));
  }
  const auto test = load_split(a.path() / "ds", "test");
  ASSERT_EQ(test.size(), 3u);
  EXPECT_EQ(test[0].frames.count, 12);
}

TEST(GenerateDataset, RefusesNonEmptyDirectoryWithoutForce) {
  TempDir a;
  std::ofstream(a.path() / "keep.txt") << "x";
  auto cfg = tiny_config();
  cfg.split_counts = {{"train", 1}};
  EXPECT_EQ(category_of([&] { generate_dataset(cfg, a.path(), false); }), ErrorCategory::refused);
  EXPECT_NO_THROW(generate_dataset(cfg, a.path(), true));
  EXPECT_FALSE(fs::exists(a.path() / "keep.txt"));
}

TEST(GenerateDataset, FamilyMixProportions) {
  const auto counts = family_counts(20, GenerateConfig{}.family_mix);
  EXPECT_EQ(counts.at(TrajectoryFamily::linear), 8);
  EXPECT_EQ(counts.at(TrajectoryFamily::c_shape), 6);
  EXPECT_EQ(counts.at(TrajectoryFamily::s_shape), 6);
  const auto big = family_counts(200, GenerateConfig{}.family_mix);
  EXPECT_EQ(big.at(TrajectoryFamily::linear), 80);
  EXPECT_EQ(big.at(TrajectoryFamily::c_shape), 60);
  EXPECT_EQ(big.at(TrajectoryFamily::s_shape), 60);
  const auto odd = family_counts(7, GenerateConfig{}.family_mix);
  EXPECT_EQ(odd.at(TrajectoryFamily::linear) + odd.at(TrajectoryFamily::c_shape) + odd.at(TrajectoryFamily::s_shape), 7);

  TempDir a;
  auto cfg = tiny_config();
  cfg.split_counts = {{"train", 10}};
  const auto infos = generate_dataset(cfg, a.path(), false);
  std::map<TrajectoryFamily, int> seen;
  for (const auto& info : load_generation_manifest(a.path())) ++seen[info.family];
  EXPECT_EQ(seen[TrajectoryFamily::linear], 4);
  EXPECT_EQ(seen[TrajectoryFamily::c_shape], 3);
  EXPECT_EQ(seen[TrajectoryFamily::s_shape], 3);
}

}  // namespace
}  // namespace dualtrack
