#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "dualtrack/checkpoint.hpp"
#include "dualtrack/datagen.hpp"
#include "dualtrack/dataset.hpp"
#include "dualtrack/evaluation.hpp"
#include "dualtrack/training.hpp"
#include "network_probes.hpp"

namespace dualtrack {
namespace {

namespace fs = std::filesystem;

TrainConfig tiny_config(const fs::path& data) {
  TrainConfig c = desk_preset();
  c.model = probes::tiny_model(32);
  c.dataset_root = data;
  c.seed = 5;
  for (auto& p : c.stages) {
    p.epochs = 2;
    p.batch_size = 2;
    p.window = 8;
    p.global_count = 4;
    p.val_every = 1;
  }
  return c;
}

class TrainingTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("dualtrack_train_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    GenerateConfig g;
    g.split_counts = {{"train", 4}, {"val", 2}, {"test", 2}};
    g.num_frames = 16;
    g.width = g.height = 32;
    g.phantom_size = {48, 48, 48};
    g.length_range_mm = {6.0, 12.0};
    g.sweeps_per_phantom = 4;
    generate_dataset(g, root_ / "data", false);
    torch::set_num_threads(1);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  fs::path run_dir(const std::string& name) { return root_ / "runs" / name; }

  static TrainingSet set(const std::string& split, const ModelConfig& m) {
    return make_training_set(load_split(root_ / "data", split), m);
  }

  static fs::path root_;
};
fs::path TrainingTest::root_;

TEST(TrackingLoss, HandArithmetic) {
  const torch::Tensor t = torch::randn({5, 6}, torch::kDouble);
  EXPECT_EQ(tracking_loss(t, t).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(tracking_loss(t + 1.0, t).item<double>(), 1.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  std::vector<double> a(30), b(30);
  double expected = 0.0;
  for (int i = 0; i < 30; ++i) {
    a[i] = n(rng);
    b[i] = n(rng);
    expected += (a[i] - b[i]) * (a[i] - b[i]);
  }
  expected /= 30.0;
  const auto ta = torch::tensor(a, torch::kDouble).view({5, 6});
  const auto tb = torch::tensor(b, torch::kDouble).view({5, 6});
  EXPECT_NEAR(tracking_loss(ta, tb).item<double>(), expected, 1e-12);
  try {
    tracking_loss(ta, tb.narrow(0, 0, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::invalid_argument);
  }
}

TEST(TrackingLoss, MaskExcludesPadding) {
  const auto pred = torch::zeros({1, 3, 6});
  auto target = torch::zeros({1, 3, 6});
  target[0][2].fill_(100.0);
  const auto mask = torch::tensor({{true, true, false}});
  EXPECT_EQ(masked_tracking_loss(pred, target, mask).item<double>(), 0.0);
}

TEST(CosineSchedule, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 0, 500), 1e-3);
  EXPECT_LE(cosine_lr(1e-3, 499, 500), 1e-5);
  EXPECT_NEAR(cosine_lr(1e-3, 250, 501), 0.5e-3, 1e-12);
  for (int s = 1; s < 500; ++s) EXPECT_LE(cosine_lr(1.0, s, 500), cosine_lr(1.0, s - 1, 500));
}

TEST(Config, PresetsAndOverrides) {
  const TrainConfig c = parse_config(
      "preset: desk\nseed: 9\nstages:\n  fusion: {epochs: 3, freeze_local_cnn: false}\nmodel:\n  fusion:\n    "
      "global_stride: 4\n");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.plan(Stage::fusion).epochs, 3);
  EXPECT_FALSE(c.plan(Stage::fusion).freeze_local_cnn);
  EXPECT_EQ(c.plan(Stage::local_cnn).epochs, 200);
  EXPECT_EQ(c.model.fusion.global_stride, 4);
  EXPECT_NE(c.model.hash(), desk_preset().model.hash());
  EXPECT_EQ(desk_preset().model.hash(), desk_preset().model.hash());
  const TrainConfig again = parse_config(dump_config(c));
  EXPECT_EQ(again.plan(Stage::fusion).epochs, 3);
  EXPECT_EQ(again.model.hash(), c.model.hash());
  EXPECT_EQ(parse_config(dump_config(paper_preset())).model.hash(), paper_preset().model.hash());
  EXPECT_THROW(parse_config("preset: huge\n"), Error);
  EXPECT_THROW(parse_config("model:\n  local:\n    temporal_kernels: [5, 5, 3, 1]\n"), Error);
  EXPECT_THROW(parse_config("model:\n  image_height: 40\n"), Error);
}

TEST_F(TrainingTest, SmokeAllStagesAndLoadableCheckpoints) {
  const TrainConfig c = tiny_config(root_ / "data");
  const auto train = set("train", c.model);
  const auto val = set("val", c.model);
  const fs::path run = run_dir("smoke");
  for (Stage s : {Stage::local_cnn, Stage::local_pool, Stage::global, Stage::fusion, Stage::coupled}) {
    const StageResult r = train_stage(c, s, run, train, &val);
    EXPECT_TRUE(r.complete) << to_string(s);
    EXPECT_EQ(r.losses.size(), 4u) << to_string(s);
    EXPECT_GE(r.best_val_gpe_mm, 0.0) << to_string(s);
    const CheckpointManifest m = read_manifest(checkpoint_path(run, s));
    EXPECT_EQ(m.stage, to_string(s));
    EXPECT_TRUE(m.complete);
    EXPECT_EQ(m.config_hash, c.model.hash());
  }
  for (Variant v : {Variant::local_only, Variant::coupled, Variant::dualtrack}) {
    DualTrackModel model = load_model(c, run, v);
    const auto evals = evaluate_sweeps(model, v, val.sweeps);
    ASSERT_EQ(evals.size(), 2u);
    for (const auto& e : evals) {
      EXPECT_TRUE(std::isfinite(e.report.gpe_mm));
      EXPECT_EQ(e.report.per_frame_drift_mm.size(), 16u);
    }
  }
  EXPECT_TRUE(fs::exists(run / "train_log.csv"));
}

TEST_F(TrainingTest, FusionRequiresEncoderCheckpoints) {
  const TrainConfig c = tiny_config(root_ / "data");
  const auto train = set("train", c.model);
  try {
    train_stage(c, Stage::fusion, run_dir("missing"), train, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::missing_prerequisite);
    EXPECT_NE(std::string(e.what()).find("local_pool"), std::string::npos);
  }
  EXPECT_THROW(load_model(c, run_dir("missing"), Variant::dualtrack), Error);
}

TEST_F(TrainingTest, SameSeedSameLosses) {
  TrainConfig c = tiny_config(root_ / "data");
  const auto train = set("train", c.model);
  const auto a = train_stage(c, Stage::local_cnn, run_dir("det_a"), train, nullptr);
  const auto b = train_stage(c, Stage::local_cnn, run_dir("det_b"), train, nullptr);
  EXPECT_EQ(a.losses, b.losses);
  c.seed = 6;
  const auto other = train_stage(c, Stage::local_cnn, run_dir("det_c"), train, nullptr);
  EXPECT_NE(a.losses, other.losses);
}

TEST_F(TrainingTest, ResumeReproducesNextLosses) {
  TrainConfig c = tiny_config(root_ / "data");
  for (auto& p : c.stages) p.epochs = 8;
  const auto train = set("train", c.model);
  const auto full = train_stage(c, Stage::global, run_dir("resume_full"), train, nullptr);
  ASSERT_EQ(full.losses.size(), 16u);
  TrainOptions stop;
  stop.stop_after_steps = 5;
  const auto first = train_stage(c, Stage::global, run_dir("resume_part"), train, nullptr, stop);
  EXPECT_FALSE(first.complete);
  ASSERT_EQ(first.losses.size(), 5u);
  TrainOptions resume;
  resume.resume = checkpoint_path(run_dir("resume_part"), Stage::global, true);
  const auto rest = train_stage(c, Stage::global, run_dir("resume_part"), train, nullptr, resume);
  EXPECT_EQ(rest.first_step, 5);
  ASSERT_GE(rest.losses.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(rest.losses[i], full.losses[5 + i]) << i;
}

TEST_F(TrainingTest, FusionKeepsLocalCnnFrozen) {
  const TrainConfig c = tiny_config(root_ / "data");
  const auto train = set("train", c.model);
  const fs::path run = run_dir("freeze");
  for (Stage s : {Stage::local_cnn, Stage::local_pool, Stage::global}) train_stage(c, s, run, train, nullptr);
  DualTrackModel before(c.model), after(c.model);
  load_checkpoint(checkpoint_path(run, Stage::local_pool), before);
  train_stage(c, Stage::fusion, run, train, nullptr);
  load_checkpoint(checkpoint_path(run, Stage::fusion), after);
  const auto pb = before->local_cnn->named_parameters();
  const auto pa = after->local_cnn->named_parameters();
  for (const auto& p : pb) EXPECT_TRUE(torch::equal(p.value(), pa[p.key()])) << p.key();
  bool pool_changed = false;
  const auto qa = after->local_pool->named_parameters();
  for (const auto& p : before->local_pool->named_parameters()) pool_changed |= !torch::equal(p.value(), qa[p.key()]);
  EXPECT_TRUE(pool_changed);
}

TEST_F(TrainingTest, IncompatibleCheckpointIsRejected) {
  const TrainConfig c = tiny_config(root_ / "data");
  DualTrackModel model(c.model);
  const fs::path path = run_dir("compat") / "m.pt";
  CheckpointManifest m;
  m.config_hash = c.model.hash();
  m.stage = "local_cnn";
  save_checkpoint(path, model, m);
  ModelConfig other = c.model;
  other.fusion.global_stride = 3;
  DualTrackModel wrong(other);
  try {
    load_checkpoint(path, wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::incompatible_checkpoint);
  }
  DualTrackModel same(c.model);
  load_checkpoint(path, same);
  for (const auto& p : model->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), same->named_parameters()[p.key()]));
}

TEST_F(TrainingTest, FrozenBatchLossDecreases) {
  torch::manual_seed(3);
  const ModelConfig mc = probes::tiny_model(32);
  DualTrackModel model(mc);
  const auto train = set("train", mc);
  std::mt19937_64 rng(2);
  std::vector<torch::Tensor> xs, ys;
  for (int i = 0; i < 2; ++i) {
    const Subsequence sub = sample_local_subsequence(train.sweeps[i], 8, rng);
    xs.push_back(frames_tensor(sub.frames));
    std::vector<float> t;
    for (const auto& r : sub.targets) t.insert(t.end(), r.begin(), r.end());
    ys.push_back(torch::tensor(t).view({7, 6}));
  }
  const auto x = torch::stack(xs), y = torch::stack(ys);
  torch::optim::AdamW opt(model->parameters(), torch::optim::AdamWOptions(1e-3));
  double first = 0, last = 0;
  for (int s = 0; s < 50; ++s) {
    opt.zero_grad();
    auto loss = tracking_loss(model->predict_local_cnn(model->local_features(x)), y);
    if (s == 0) first = loss.item<double>();
    last = loss.item<double>();
    loss.backward();
    opt.step();
  }
  EXPECT_LT(last, 0.5 * first);
}

TEST_F(TrainingTest, EvaluationOracles) {
  const auto sweeps = load_split(root_ / "data", "test");
  // Ground-truth passthrough gives zero error everywhere.
  for (const auto& s : sweeps) {
    const auto e = make_estimate(s.id, adjacent_relatives(s.poses), "gt", "");
    const auto ev = evaluate_estimate(s, e);
    EXPECT_NEAR(ev.report.gpe_mm, 0.0, 1e-9);
    EXPECT_NEAR(ev.report.lpe_um, 0.0, 1e-6);
    EXPECT_NEAR(ev.report.fdr_percent, 0.0, 1e-9);
    EXPECT_NEAR(ev.report.max_drift_mm, 0.0, 1e-9);
  }
  // Zero motion on a linear sweep: the predicted end is the start, so FDR is 100%.
  GenerateConfig g;
  g.width = g.height = 32;
  g.num_frames = 12;
  const Phantom ph = make_phantom(4, {64, 64, 64}, 1.0, 4);
  const Sweep lin = generate_sweep(g, ph, TrajectoryFamily::linear, 10.0, 0.0, 3, "lin");
  DualTrackModel model(probes::tiny_model(32));
  const auto evals = evaluate_sweeps(model, Variant::zero, {lin});
  EXPECT_NEAR(evals[0].report.fdr_percent, 100.0, 1e-9);
  // Aggregate equals the hand average, and the files exist.
  DualTrackModel m2(probes::tiny_model(32));
  const auto all = evaluate_sweeps(m2, Variant::zero, sweeps);
  const fs::path dir = run_dir("eval");
  const MetricsReport mean = write_evaluation(all, dir, "zero");
  double gpe = 0.0;
  for (const auto& e : all) gpe += e.report.gpe_mm;
  EXPECT_NEAR(mean.gpe_mm, gpe / all.size(), 1e-12);
  EXPECT_TRUE(fs::exists(dir / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "sweeps" / (sweeps[0].id + ".json")));
}

TEST_F(TrainingTest, EstimateRoundTrip) {
  const auto sweeps = load_split(root_ / "data", "test");
  const auto e = make_estimate(sweeps[0].id, adjacent_relatives(sweeps[0].poses), "gt", "abc");
  save_estimate(e, run_dir("est") / "e.json");
  const auto back = load_estimate(run_dir("est") / "e.json");
  ASSERT_EQ(back.composed.size(), e.composed.size());
  for (std::size_t i = 0; i < e.composed.size(); ++i) {
    EXPECT_LT((back.composed[i].matrix() - e.composed[i].matrix()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(back.composed[i].is_valid());
  }
}

TEST_F(TrainingTest, ReconstructionPlotsForPerfectEstimate) {
  const auto sweeps = load_split(root_ / "data", "test");
  const Sweep& s = sweeps[0];
  const auto e = make_estimate(s.id, adjacent_relatives(s.poses), "gt", "");
  const auto gt = out_of_plane_displacement(s.poses);
  const auto est = out_of_plane_displacement(e.composed);
  ASSERT_EQ(gt.size(), est.size());
  for (std::size_t i = 0; i < gt.size(); ++i) EXPECT_LT(std::abs(gt[i] - est[i]), 1e-6);
  const auto plots = write_reconstruction_plots(s, {e}, run_dir("plots"));
  EXPECT_GT(fs::file_size(plots.ribbon), 500u);
  EXPECT_GT(fs::file_size(plots.out_of_plane), 500u);
  auto short_e = e;
  short_e.composed.pop_back();
  EXPECT_THROW(write_reconstruction_plots(s, {short_e}, run_dir("plots2")), Error);
}

}  // namespace
}  // namespace dualtrack
