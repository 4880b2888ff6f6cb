#include <gtest/gtest.h>

#include <filesystem>

#include "dualtrack/compound.hpp"
#include "dualtrack/phantom.hpp"
#include "volume_oracle.hpp"

namespace dualtrack {
namespace {

namespace fs = std::filesystem;

class CompoundTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    phantom_ = new Phantom(make_phantom(21, {64, 64, 64}, 1.0, 6));
    cal_ = default_calibration(32, 32, 0.5);
    TrajectorySpec spec;
    spec.family = TrajectoryFamily::c_shape;
    spec.length_mm = 20.0;
    spec.num_frames = 40;
    spec.rotation_amplitude_deg = 0.4;
    spec.seed = 4;
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 1>(0, 3) = Eigen::Vector3d(32, 8, 16);
    spec.start = Pose(m);
    RenderOptions opt;
    opt.width = opt.height = 32;
    opt.noise_level = 0.05;
    opt.noise_seed = 9;
    sweep_ = new Sweep(render_sweep(*phantom_, make_trajectory(spec), cal_, opt));
  }
  static void TearDownTestSuite() {
    delete phantom_;
    delete sweep_;
  }
  static Phantom* phantom_;
  static Sweep* sweep_;
  static Calibration cal_;
};
Phantom* CompoundTest::phantom_ = nullptr;
Sweep* CompoundTest::sweep_ = nullptr;
Calibration CompoundTest::cal_;

TEST_F(CompoundTest, SingleFrameFillsOneSlice) {
  FrameStack one(1, 32, 32);
  std::copy_n(sweep_->frames.data.begin(), one.data.size(), one.data.begin());
  Pose flat = Pose::identity();
  const Volume vol = compound_frames(one, std::span<const Pose>(&flat, 1), cal_);
  EXPECT_EQ(vol.size[2], 1);
  std::size_t written = 0;
  for (auto w : vol.written) written += w;
  EXPECT_EQ(written, 32u * 32u);
}

TEST_F(CompoundTest, Deterministic) {
  const Volume a = compound_frames(sweep_->frames, sweep_->poses, cal_);
  const Volume b = compound_frames(sweep_->frames, sweep_->poses, cal_);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(a.size, b.size);
}

TEST_F(CompoundTest, GroundTruthPosesRecoverPhantom) {
  const Volume vol = compound_frames(sweep_->frames, sweep_->poses, cal_);
  const double r = oracle::volume_phantom_correlation(vol, *phantom_);
  EXPECT_GT(r, 0.8) << r;
}

TEST_F(CompoundTest, ReversedPosesCorrelateLess) {
  Trajectory wrong = sweep_->poses;
  std::reverse(wrong.begin(), wrong.end());
  const double right = oracle::volume_phantom_correlation(compound_frames(sweep_->frames, sweep_->poses, cal_), *phantom_);
  const double reversed = oracle::volume_phantom_correlation(compound_frames(sweep_->frames, wrong, cal_), *phantom_);
  EXPECT_LT(reversed, right - 0.2) << right << " vs " << reversed;
}

TEST_F(CompoundTest, BoundsOutsideAllPixelsFail) {
  CompoundOptions opt;
  opt.bounds = Eigen::AlignedBox3d(Eigen::Vector3d(500, 500, 500), Eigen::Vector3d(510, 510, 510));
  try {
    compound_frames(sweep_->frames, sweep_->poses, cal_, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::invalid_argument);
  }
}

TEST_F(CompoundTest, LengthMismatchFails) {
  EXPECT_THROW(compound_frames(sweep_->frames, std::span<const Pose>(sweep_->poses).first(3), cal_), Error);
}

TEST_F(CompoundTest, SaveLoadRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / ("dualtrack_vol_" + std::to_string(::getpid()));
  const Volume vol = compound_frames(sweep_->frames, sweep_->poses, cal_);
  save_volume(vol, dir / "v.json");
  const Volume back = load_volume(dir / "v.json");
  EXPECT_EQ(back.size, vol.size);
  EXPECT_EQ(back.data, vol.data);
  EXPECT_NEAR((back.origin_mm - vol.origin_mm).norm(), 0.0, 1e-12);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace dualtrack
