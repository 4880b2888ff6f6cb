#include "dualtrack/training.hpp"

#include <ATen/Context.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>

#include "dualtrack/checkpoint.hpp"
#include "dualtrack/dataset.hpp"
#include "dualtrack/error.hpp"
#include "dualtrack/evaluation.hpp"
#include "dualtrack/metrics.hpp"

namespace dualtrack {

namespace fs = std::filesystem;
using torch::Tensor;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t epoch_seed(std::uint64_t seed, Stage stage, int epoch) {
  return splitmix(splitmix(seed ^ (static_cast<std::uint64_t>(stage) + 1) * 0x1000193ULL) + epoch);
}

Tensor targets_tensor(const std::vector<std::array<double, 6>>& targets) {
  Tensor t = torch::empty({static_cast<int64_t>(targets.size()), 6}, torch::kDouble);
  auto a = t.accessor<double, 2>();
  for (std::size_t k = 0; k < targets.size(); ++k)
    for (int c = 0; c < 6; ++c) a[k][c] = targets[k][c];
  return t.to(torch::kFloat);
}

std::vector<std::string> trainable_modules(Stage stage, bool freeze_cnn) {
  switch (stage) {
    case Stage::local_cnn: return {"local_cnn", "local_temp_head"};
    case Stage::local_pool: return {"local_pool", "local_head"};
    case Stage::global: return {"global_encoder", "global_head"};
    case Stage::fusion: {
      std::vector<std::string> m{"local_pool", "global_encoder", "fusion", "fusion_head"};
      if (!freeze_cnn) m.push_back("local_cnn");
      return m;
    }
    case Stage::coupled: return {"local_cnn", "local_pool", "coupled_temporal", "coupled_out", "coupled_head"};
  }
  return {};
}

bool uses_feature_cache(Stage stage, const StagePlan& plan) {
  return stage == Stage::local_pool || (stage == Stage::fusion && plan.freeze_local_cnn);
}

std::vector<Tensor> parameters_of(DualTrackModel& model, const std::vector<std::string>& modules) {
  std::vector<Tensor> out;
  for (auto& p : model->named_parameters()) {
    const std::string top = p.key().substr(0, p.key().find('.'));
    const bool train = std::find(modules.begin(), modules.end(), top) != modules.end();
    p.value().set_requires_grad(train);
    if (train) out.push_back(p.value());
  }
  return out;
}

void copy_linear(torch::nn::Linear& dst, const torch::nn::Linear& src) {
  torch::NoGradGuard guard;
  dst->weight.copy_(src->weight);
  dst->bias.copy_(src->bias);
}

// Stacks [N_b, ...] tensors into [B, max N, ...] plus a validity mask [B, max N].
std::pair<Tensor, Tensor> pad_stack(const std::vector<Tensor>& items) {
  int64_t n = 0;
  for (const auto& t : items) n = std::max(n, t.size(0));
  std::vector<Tensor> padded;
  Tensor mask = torch::zeros({static_cast<int64_t>(items.size()), n}, torch::kBool);
  for (std::size_t b = 0; b < items.size(); ++b) {
    const auto& t = items[b];
    mask[b].narrow(0, 0, t.size(0)).fill_(true);
    if (t.size(0) == n) {
      padded.push_back(t);
    } else {
      std::vector<int64_t> shape = t.sizes().vec();
      shape[0] = n - t.size(0);
      padded.push_back(torch::cat({t, torch::zeros(shape, t.options())}, 0));
    }
  }
  return {torch::stack(padded), mask};
}

class TrainLog {
 public:
  explicit TrainLog(const fs::path& path) : path_(path) {
    const bool fresh = !fs::exists(path_);
    out_.open(path_, std::ios::app);
    require(static_cast<bool>(out_), ErrorCategory::io_error, "cannot open " + path_.string());
    if (fresh) out_ << "step,stage,epoch,loss,lr,val_gpe_mm,val_lpe_um\n";
    out_ << std::setprecision(9);
  }
  void step(std::int64_t step, Stage stage, int epoch, double loss, double lr) {
    out_ << step << "," << to_string(stage) << "," << epoch << "," << loss << "," << lr << ",,\n";
  }
  void validation(std::int64_t step, Stage stage, int epoch, double lr, double gpe, double lpe) {
    out_ << step << "," << to_string(stage) << "," << epoch << ",," << lr << "," << gpe << "," << lpe << "\n";
    out_.flush();
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

struct ValScore {
  double gpe_mm = 0.0;
  double lpe_um = 0.0;
};

Trajectory pick_poses(const Trajectory& poses, const std::vector<int>& idx) {
  Trajectory out;
  for (int i : idx) out.push_back(poses[i]);
  return out;
}

ValScore validate(DualTrackModel& model, Stage stage, const TrainingSet& val) {
  torch::NoGradGuard guard;
  std::vector<MetricsReport> reports;
  for (std::size_t i = 0; i < val.sweeps.size(); ++i) {
    const Sweep& s = val.sweeps[i];
    const Tensor& frames = val.frames[i];
    Tensor rel;
    Trajectory gt = s.poses;
    switch (stage) {
      case Stage::local_cnn:
        rel = model->predict_local_cnn(model->local_features(frames.unsqueeze(0))).squeeze(0);
        break;
      case Stage::local_pool: rel = predict_sweep(model, Variant::local_only, frames); break;
      case Stage::fusion: rel = predict_sweep(model, Variant::dualtrack, frames); break;
      case Stage::coupled: rel = predict_sweep(model, Variant::coupled, frames); break;
      case Stage::global: {
        const GlobalInput& g = val.global_inputs[i];
        rel = model->predict_global(g.frames.unsqueeze(0), g.positions.unsqueeze(0), {}).squeeze(0);
        const Tensor pos = g.positions.to(torch::kLong);
        std::vector<int> idx(pos.data_ptr<int64_t>(), pos.data_ptr<int64_t>() + pos.numel());
        gt = pick_poses(s.poses, idx);
        break;
      }
    }
    const Trajectory pred = compose_trajectory(to_params(rel), Pose::identity());
    MetricsReport r;
    r.gpe_mm = global_point_error(gt, pred, s.calibration, s.frames.width, s.frames.height);
    r.lpe_um = local_point_error(gt, pred, s.calibration, s.frames.width, s.frames.height);
    reports.push_back(r);
  }
  const MetricsReport m = mean_report(reports);
  return {m.gpe_mm, m.lpe_um};
}

std::vector<Tensor> cache_features(DualTrackModel& model, const TrainingSet& set) {
  torch::NoGradGuard guard;
  std::vector<Tensor> out;
  for (const auto& f : set.frames) out.push_back(model->local_features(f.unsqueeze(0)).squeeze(0));
  return out;
}

}  // namespace

Tensor tracking_loss(const Tensor& pred, const Tensor& target) {
  require(pred.sizes() == target.sizes(), ErrorCategory::invalid_argument,
          "tracking_loss: prediction and target shapes differ");
  return (pred - target).pow(2).mean();
}

Tensor masked_tracking_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require(pred.sizes() == target.sizes(), ErrorCategory::invalid_argument,
          "tracking_loss: prediction and target shapes differ");
  const Tensor m = mask.to(pred.dtype()).unsqueeze(-1);
  const Tensor count = m.sum() * pred.size(-1);
  require(count.item<double>() > 0, ErrorCategory::invalid_argument, "tracking_loss: empty mask");
  return ((pred - target).pow(2) * m).sum() / count;
}

double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 1) return base_lr;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps - 1), 0.0, 1.0);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

TrainingSet make_training_set(std::vector<Sweep> sweeps, const ModelConfig& model) {
  TrainingSet set;
  for (const auto& s : sweeps) {
    require(s.frames.height == model.image_height && s.frames.width == model.image_width,
            ErrorCategory::shape_mismatch,
            "sweep " + s.id + " is " + std::to_string(s.frames.height) + "x" + std::to_string(s.frames.width) +
                ", model expects " + std::to_string(model.image_height) + "x" + std::to_string(model.image_width));
    set.frames.push_back(frames_tensor(s.frames));
    std::vector<int> all(s.size());
    std::iota(all.begin(), all.end(), 0);
    set.targets.push_back(targets_tensor(relative_targets(s.poses, all)));
    set.global_inputs.push_back(make_global_input(set.frames.back(), model.global, model.fusion.global_stride));
  }
  set.sweeps = std::move(sweeps);
  return set;
}

fs::path checkpoint_path(const fs::path& run_dir, Stage stage, bool last) {
  return run_dir / "checkpoints" / (to_string(stage) + (last ? "_last.pt" : ".pt"));
}

std::vector<Stage> prerequisites(Stage stage) {
  switch (stage) {
    case Stage::local_pool: return {Stage::local_cnn};
    case Stage::fusion: return {Stage::local_pool, Stage::global};
    case Stage::coupled: return {Stage::local_pool};
    default: return {};
  }
}

Stage final_stage(Variant variant) {
  switch (variant) {
    case Variant::local_only: return Stage::local_pool;
    case Variant::coupled: return Stage::coupled;
    default: return Stage::fusion;
  }
}

void apply_determinism(const TrainConfig& config) {
  if (config.deterministic) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
  }
}

StageResult train_stage(const TrainConfig& config, Stage stage, const fs::path& run_dir, const TrainingSet& train,
                        const TrainingSet* val, const TrainOptions& options) {
  const StagePlan& plan = config.plan(stage);
  require(!train.sweeps.empty(), ErrorCategory::invalid_argument, "training set is empty");
  for (Stage pre : prerequisites(stage)) {
    require(fs::exists(checkpoint_path(run_dir, pre)), ErrorCategory::missing_prerequisite,
            "stage " + to_string(stage) + " requires stage " + to_string(pre) + " (" +
                checkpoint_path(run_dir, pre).string() + " not found)");
  }
  apply_determinism(config);
  torch::manual_seed(epoch_seed(config.seed, stage, -1));
  DualTrackModel model(config.model);

  switch (stage) {
    case Stage::local_pool:
      load_checkpoint(checkpoint_path(run_dir, Stage::local_cnn), model, {"local_cnn", "local_temp_head"});
      break;
    case Stage::fusion:
      load_checkpoint(checkpoint_path(run_dir, Stage::local_pool), model,
                      {"local_cnn", "local_temp_head", "local_pool", "local_head"});
      load_checkpoint(checkpoint_path(run_dir, Stage::global), model, {"global_encoder", "global_head"});
      copy_linear(model->fusion_head, model->local_head);
      break;
    case Stage::coupled:
      load_checkpoint(checkpoint_path(run_dir, Stage::local_pool), model,
                      {"local_cnn", "local_temp_head", "local_pool", "local_head"});
      copy_linear(model->coupled_head, model->local_head);
      break;
    default: break;
  }

  const std::vector<Tensor> params = parameters_of(model, trainable_modules(stage, plan.freeze_local_cnn));
  torch::optim::AdamW optimizer(params, torch::optim::AdamWOptions(plan.learning_rate).weight_decay(plan.weight_decay));

  const int n = static_cast<int>(train.sweeps.size());
  const int steps_per_epoch = (n + plan.batch_size - 1) / plan.batch_size;
  const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * plan.epochs;

  CheckpointManifest manifest;
  manifest.config_hash = config.model.hash();
  manifest.stage = to_string(stage);
  manifest.total_steps = total_steps;
  manifest.seed = config.seed;

  std::int64_t step = 0;
  if (options.resume) {
    const CheckpointManifest m = load_checkpoint(*options.resume, model, {}, &optimizer);
    require(m.stage == to_string(stage), ErrorCategory::incompatible_checkpoint,
            options.resume->string() + " is a " + m.stage + " checkpoint, not " + to_string(stage));
    require(m.total_steps == total_steps && m.seed == config.seed, ErrorCategory::incompatible_checkpoint,
            options.resume->string() + ": stage plan or seed differs from the checkpoint");
    step = m.step;
    manifest.best_val_gpe_mm = m.best_val_gpe_mm;
  }

  std::vector<Tensor> features;
  if (uses_feature_cache(stage, plan)) features = cache_features(model, train);

  fs::create_directories(run_dir / "checkpoints");
  TrainLog log(run_dir / "train_log.csv");
  StageResult result;
  result.first_step = step;
  result.checkpoint = checkpoint_path(run_dir, stage);

  auto save_last = [&](int epoch, bool complete) {
    manifest.step = step;
    manifest.epoch = epoch;
    manifest.complete = complete;
    save_checkpoint(checkpoint_path(run_dir, stage, true), model, manifest, &optimizer);
  };
  auto run_validation = [&](int epoch) {
    if (!val || val->sweeps.empty()) return;
    model->eval();
    const ValScore score = validate(model, stage, *val);
    model->train();
    log.validation(step, stage, epoch, cosine_lr(plan.learning_rate, step, total_steps), score.gpe_mm, score.lpe_um);
    if (options.verbose) {
      std::cerr << to_string(stage) << " epoch " << epoch << " val GPE " << score.gpe_mm << " mm, LPE "
                << score.lpe_um << " um\n";
    }
    if (manifest.best_val_gpe_mm < 0.0 || score.gpe_mm < manifest.best_val_gpe_mm) {
      manifest.best_val_gpe_mm = score.gpe_mm;
      manifest.step = step;
      manifest.epoch = epoch;
      manifest.complete = false;
      save_checkpoint(result.checkpoint, model, manifest);
    }
  };

  model->train();
  if (step == 0 && (stage == Stage::fusion || stage == Stage::coupled)) run_validation(0);

  const int start_epoch = static_cast<int>(step / std::max(steps_per_epoch, 1));
  for (int epoch = start_epoch; epoch < plan.epochs; ++epoch) {
    std::mt19937_64 rng(epoch_seed(config.seed, stage, epoch));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int b = 0; b < steps_per_epoch; ++b) {
      const std::int64_t this_step = static_cast<std::int64_t>(epoch) * steps_per_epoch + b;
      const int lo = b * plan.batch_size, hi = std::min(n, lo + plan.batch_size);

      // Sampling always runs so the rng stream is independent of where a resume starts.
      std::vector<Subsequence> subs;
      for (int k = lo; k < hi; ++k) {
        const Sweep& s = train.sweeps[order[k]];
        if (stage == Stage::local_cnn || stage == Stage::local_pool) {
          subs.push_back(sample_local_subsequence(s, std::min(plan.window, static_cast<int>(s.size())), rng));
        } else if (stage == Stage::global) {
          subs.push_back(sample_global_subsequence(s, std::min(plan.global_count, static_cast<int>(s.size())), rng,
                                                   config.model.global.input_height,
                                                   config.model.global.input_width));
        }
      }
      if (this_step < step) continue;

      Tensor loss;
      if (stage == Stage::local_cnn) {
        std::vector<Tensor> xs, ys;
        for (const auto& sub : subs) {
          xs.push_back(frames_tensor(sub.frames));
          ys.push_back(targets_tensor(sub.targets));
        }
        auto [x, mask] = pad_stack(xs);
        auto [y, ymask] = pad_stack(ys);
        loss = masked_tracking_loss(model->predict_local_cnn(model->local_features(x)), y, ymask);
      } else if (stage == Stage::local_pool) {
        std::vector<Tensor> fs_, ys;
        for (std::size_t k = 0; k < subs.size(); ++k) {
          const auto& idx = subs[k].frame_indices;
          const Tensor index = torch::tensor(std::vector<int64_t>(idx.begin(), idx.end()), torch::kLong);
          fs_.push_back(features[order[lo + k]].index_select(0, index));
          ys.push_back(targets_tensor(subs[k].targets));
        }
        auto [f, mask] = pad_stack(fs_);
        auto [y, ymask] = pad_stack(ys);
        loss = masked_tracking_loss(model->predict_local_only(f), y, ymask);
      } else if (stage == Stage::global) {
        std::vector<Tensor> xs, ps, ys;
        for (const auto& sub : subs) {
          xs.push_back(frames_tensor(sub.frames));
          ps.push_back(torch::tensor(std::vector<float>(sub.frame_indices.begin(), sub.frame_indices.end())));
          ys.push_back(targets_tensor(sub.targets));
        }
        auto [x, valid] = pad_stack(xs);
        auto [p, pmask] = pad_stack(ps);
        auto [y, ymask] = pad_stack(ys);
        loss = masked_tracking_loss(model->predict_global(x, p, valid), y, ymask);
      } else {
        std::vector<Tensor> locals, gs, gps, ys;
        for (int k = lo; k < hi; ++k) {
          const int i = order[k];
          locals.push_back(features.empty() ? train.frames[i] : features[i]);
          gs.push_back(train.global_inputs[i].frames);
          gps.push_back(train.global_inputs[i].positions);
          ys.push_back(train.targets[i]);
        }
        auto [l, lvalid] = pad_stack(locals);
        auto [g, gvalid] = pad_stack(gs);
        auto [gp, gpmask] = pad_stack(gps);
        auto [y, ymask] = pad_stack(ys);
        const Tensor f = features.empty() ? model->local_features(l) : l;
        const Tensor pred = stage == Stage::fusion ? model->predict_dualtrack(f, lvalid, g, gp, gvalid)
                                                   : model->predict_coupled(f, lvalid);
        loss = masked_tracking_loss(pred, y, ymask);
      }

      const double lr = cosine_lr(plan.learning_rate, step, total_steps);
      for (auto& group : optimizer.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
      const double value = loss.item<double>();
      require(std::isfinite(value), ErrorCategory::divergence,
              "stage " + to_string(stage) + " diverged at step " + std::to_string(step) + " (loss " +
                  std::to_string(value) + ")");
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      log.step(step, stage, epoch, value, lr);
      result.losses.push_back(value);
      ++step;

      if (b == steps_per_epoch - 1 && plan.val_every > 0 &&
          ((epoch + 1) % plan.val_every == 0 || epoch + 1 == plan.epochs)) {
        run_validation(epoch + 1);
      }
      if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) save_last(epoch, false);
      if (options.stop_after_steps >= 0 && step >= options.stop_after_steps && step < total_steps) {
        save_last(epoch, false);
        result.best_val_gpe_mm = manifest.best_val_gpe_mm;
        return result;
      }
    }
    if (options.verbose && !result.losses.empty()) {
      std::cerr << to_string(stage) << " epoch " << epoch + 1 << "/" << plan.epochs << " loss " << result.losses.back()
                << "\n";
    }
  }

  save_last(plan.epochs, true);
  if (manifest.best_val_gpe_mm < 0.0) {
    save_checkpoint(result.checkpoint, model, manifest);
  } else {
    // Mark the selected checkpoint complete.
    DualTrackModel selected(config.model);
    CheckpointManifest m = load_checkpoint(result.checkpoint, selected);
    m.complete = true;
    m.total_steps = total_steps;
    save_checkpoint(result.checkpoint, selected, m);
  }
  result.best_val_gpe_mm = manifest.best_val_gpe_mm;
  result.complete = true;
  return result;
}

DualTrackModel load_model(const TrainConfig& config, const fs::path& run_dir, Variant variant,
                          std::string* checkpoint_hash) {
  DualTrackModel model(config.model);
  model->eval();
  if (variant == Variant::zero) {
    if (checkpoint_hash) *checkpoint_hash = "zero";
    return model;
  }
  const Stage stage = final_stage(variant);
  const fs::path path = checkpoint_path(run_dir, stage);
  require(fs::exists(path), ErrorCategory::missing_prerequisite,
          "variant " + to_string(variant) + " requires stage " + to_string(stage) + " (" + path.string() +
              " not found)");
  const CheckpointManifest m = load_checkpoint(path, model);
  if (checkpoint_hash) *checkpoint_hash = m.config_hash + "-" + m.stage + "-" + std::to_string(m.step);
  return model;
}

std::vector<Stage> stages_for(Variant variant) {
  switch (variant) {
    case Variant::zero: return {};
    case Variant::local_only: return {Stage::local_cnn, Stage::local_pool};
    case Variant::coupled: return {Stage::local_cnn, Stage::local_pool, Stage::coupled};
    case Variant::dualtrack: return {Stage::local_cnn, Stage::local_pool, Stage::global, Stage::fusion};
  }
  return {};
}

void ensure_stages(const TrainConfig& config, const fs::path& run_dir, const std::vector<Stage>& stages, bool verbose) {
  std::vector<Stage> todo;
  for (Stage s : stages) {
    const fs::path path = checkpoint_path(run_dir, s);
    const bool done = fs::exists(path) && read_manifest(path).complete;
    if (!done && std::find(todo.begin(), todo.end(), s) == todo.end()) {
      todo.push_back(s);
    }
  }
  if (todo.empty()) return;
  require(!config.dataset_root.empty(), ErrorCategory::invalid_argument, "config has no dataset_root");
  const TrainingSet train = make_training_set(load_split(config.dataset_root, "train"), config.model);
  const TrainingSet val = make_training_set(load_split(config.dataset_root, "val"), config.model);
  TrainOptions options;
  options.verbose = verbose;
  for (Stage s : todo) train_stage(config, s, run_dir, train, &val, options);
}

AblationResult run_ablation(const TrainConfig& config, const fs::path& run_dir, const std::vector<Variant>& variants,
                            const std::string& split, bool verbose) {
  std::vector<Stage> needed;
  for (Variant v : variants) {
    for (Stage s : stages_for(v)) needed.push_back(s);
  }
  ensure_stages(config, run_dir, needed, verbose);
  const std::vector<Sweep> sweeps = load_split(config.dataset_root, split);
  AblationResult result;
  for (Variant v : variants) {
    std::string hash;
    DualTrackModel model = load_model(config, run_dir, v, &hash);
    auto evals = evaluate_sweeps(model, v, sweeps, hash);
    std::vector<MetricsReport> reports;
    for (const auto& e : evals) reports.push_back(e.report);
    result.mean[to_string(v)] = mean_report(reports);
    result.per_sweep[to_string(v)] = std::move(evals);
  }
  return result;
}

}  // namespace dualtrack
