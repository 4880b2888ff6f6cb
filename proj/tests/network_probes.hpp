#pragma once

// Probes shared by the network unit tests and the acceptance suite.

#include <torch/torch.h>

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "dualtrack/networks.hpp"

namespace dualtrack::probes {

inline ModelConfig tiny_model(int image = 32) {
  ModelConfig m;
  m.image_height = m.image_width = image;
  m.local.channels = {4, 4, 8, 8};
  m.local.pooled_dim = 16;
  m.local.pool_heads = 2;
  m.global.channels = {4, 4, 8, 8};
  m.global.feature_dim = 16;
  m.global.input_height = m.global.input_width = image;
  m.global.temporal = {16, 32, 1, 2};
  m.fusion.interposer = {16, 8, 1, 2};
  m.fusion.decoder = {16, 32, 1, 2};
  m.fusion.global_stride = 2;
  m.coupled = {16, 32, 1, 2};
  return m;
}

// True when embedding t is bit-identical after every frame outside
// [t - before, t + after] is replaced by noise.
inline bool locality_holds(DualTrackModel& model, const torch::Tensor& frames, int t, int before, int after,
                           std::uint64_t seed) {
  torch::NoGradGuard guard;
  const torch::Tensor base = model->local_embed(model->local_features(frames.unsqueeze(0))).squeeze(0);
  torch::Tensor changed = frames.clone();
  torch::manual_seed(seed);
  for (int k = 0; k < frames.size(0); ++k) {
    if (k < t - before || k > t + after) changed[k] = torch::rand_like(frames[k]);
  }
  const torch::Tensor out = model->local_embed(model->local_features(changed.unsqueeze(0))).squeeze(0);
  return torch::equal(base[t], out[t]);
}

// Largest change of backbone feature k != j when frame j is replaced.
inline double backbone_leak(DualTrackModel& model, const torch::Tensor& frames, int j) {
  torch::NoGradGuard guard;
  const torch::Tensor base = model->global_encoder->backbone_features(frames.unsqueeze(0)).squeeze(0);
  torch::Tensor changed = frames.clone();
  changed[j] = torch::rand_like(frames[j]);
  const torch::Tensor out = model->global_encoder->backbone_features(changed.unsqueeze(0)).squeeze(0);
  double leak = 0.0;
  for (int k = 0; k < frames.size(0); ++k) {
    if (k != j) leak = std::max(leak, (out[k] - base[k]).abs().max().item<double>());
  }
  if (torch::equal(out[j], base[j])) return -1.0;  // replaced frame did not change its own feature
  return leak;
}

// Norm of d(sum of fused states)/d(global states).
inline double cross_attention_sensitivity(DualTrackModel& model, int n, int l) {
  const int d = model->config().local.pooled_dim;
  const torch::Tensor local = torch::randn({1, n, d});
  const torch::Tensor global = torch::randn({1, l, d}).set_requires_grad(true);
  const torch::Tensor gpos = torch::arange(l, torch::kFloat).unsqueeze(0) * model->config().fusion.global_stride;
  const torch::Tensor out = model->fusion->forward(local, {}, {}, global, gpos, {});
  out.sum().backward();
  return global.grad().norm().item<double>();
}

struct GradCheckResult {
  int sampled = 0;
  int passed = 0;
  double worst = 0.0;
  std::vector<std::string> failures;  // "name[i] analytic numeric"
};

// Central differences on sampled scalar parameters of a float64 model,
// loss = MSE of the end-to-end prediction against fixed targets.
inline GradCheckResult gradient_check(DualTrackModel& model, const torch::Tensor& frames, const torch::Tensor& targets,
                                      int samples_per_tensor, double eps, double tol, std::uint64_t seed) {
  auto loss_fn = [&] { return torch::mse_loss(model->forward(frames), targets); };
  model->zero_grad();
  loss_fn().backward();
  std::mt19937_64 rng(seed);
  GradCheckResult r;
  torch::NoGradGuard guard;
  for (auto& p : model->named_parameters()) {
    torch::Tensor param = p.value();
    if (!param.grad().defined()) continue;
    const torch::Tensor grad = param.grad().clone();
    auto flat = param.view({-1});
    std::uniform_int_distribution<std::int64_t> pick(0, flat.size(0) - 1);
    for (int s = 0; s < samples_per_tensor; ++s) {
      const std::int64_t i = pick(rng);
      const double orig = flat[i].item<double>();
      flat[i] = orig + eps;
      const double up = loss_fn().item<double>();
      flat[i] = orig - eps;
      const double down = loss_fn().item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = grad.view({-1})[i].item<double>();
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-10});
      const double rel = std::abs(numeric - analytic) / scale;
      ++r.sampled;
      if (rel < tol) {
        ++r.passed;
      } else {
        r.failures.push_back(p.key() + "[" + std::to_string(i) + "] " + std::to_string(analytic) + " " +
                             std::to_string(numeric));
      }
      r.worst = std::max(r.worst, rel);
    }
  }
  return r;
}

}  // namespace dualtrack::probes
