#include "dualtrack/networks.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "dualtrack/dataset.hpp"
#include "dualtrack/error.hpp"

namespace dualtrack {

namespace F = torch::nn::functional;
using torch::Tensor;

namespace {

int norm_groups(int channels) {
  for (int g : {8, 4, 2}) {
    if (channels % g == 0 && channels / g >= 2) return g;
  }
  return 1;
}

// GroupNorm on every frame separately: x [B, C, T, H, W].
Tensor frame_norm(torch::nn::GroupNorm& norm, const Tensor& x) {
  const auto b = x.size(0), c = x.size(1), t = x.size(2), h = x.size(3), w = x.size(4);
  Tensor y = x.permute({0, 2, 1, 3, 4}).reshape({b * t, c, h, w});
  y = norm->forward(y);
  return y.reshape({b, t, c, h, w}).permute({0, 2, 1, 3, 4});
}

// Additive mask [B, 1, 1, S] from a validity mask [B, S].
Tensor attention_bias(const Tensor& key_valid, const Tensor& like) {
  auto bias = torch::zeros(key_valid.sizes(), like.options());
  bias.masked_fill_(key_valid.logical_not(), -1e9);
  return bias.unsqueeze(1).unsqueeze(1);
}

std::map<std::string, BackboneFactory>& backbone_registry() {
  static std::map<std::string, BackboneFactory> registry{
      {"small-2d-cnn", [](const GlobalEncoderConfig& c) { return std::make_shared<SmallCnnBackbone>(c); }}};
  return registry;
}

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

Tensor default_positions(const Tensor& x) {
  const auto b = x.size(0), n = x.size(1);
  return torch::arange(n, x.options()).unsqueeze(0).expand({b, n});
}

torch::nn::Linear small_linear(int in, int out, double std) {
  torch::nn::Linear l(in, out);
  torch::NoGradGuard guard;
  l->weight.normal_(0.0, std);
  l->bias.zero_();
  return l;
}

}  // namespace

Tensor sinusoidal_encoding(const Tensor& positions, int dim) {
  const auto opts = positions.options();
  const int half = (dim + 1) / 2;
  const Tensor i = torch::arange(half, opts);
  const Tensor freq = torch::exp(-std::log(10000.0) * 2.0 * i / dim);
  const Tensor angle = positions.unsqueeze(-1) * freq;
  Tensor out = torch::stack({torch::sin(angle), torch::cos(angle)}, -1).flatten(-2);
  return out.narrow(-1, 0, dim);
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int dim, int heads, int memory_dim) : heads_(heads) {
  require(dim % heads == 0, ErrorCategory::invalid_argument, "attention: dim must be divisible by heads");
  q_ = register_module("q", torch::nn::Linear(dim, dim));
  k_ = register_module("k", torch::nn::Linear(torch::nn::LinearOptions(memory_dim, dim).bias(false)));
  v_ = register_module("v", torch::nn::Linear(memory_dim, dim));
  o_ = register_module("o", torch::nn::Linear(dim, dim));
}

Tensor MultiHeadAttentionImpl::forward(const Tensor& x, const Tensor& memory, const Tensor& key_valid) {
  const auto b = x.size(0), t = x.size(1), s = memory.size(1);
  const auto d = q_->weight.size(0);
  const auto hd = d / heads_;
  auto split = [&](const Tensor& y, int64_t len) { return y.view({b, len, heads_, hd}).transpose(1, 2); };
  const Tensor q = split(q_->forward(x), t);
  const Tensor k = split(k_->forward(memory), s);
  const Tensor v = split(v_->forward(memory), s);
  Tensor scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd));
  if (key_valid.defined()) scores = scores + attention_bias(key_valid, scores);
  const Tensor ctx = torch::matmul(torch::softmax(scores, -1), v).transpose(1, 2).reshape({b, t, d});
  return o_->forward(ctx);
}

TransformerLayerImpl::TransformerLayerImpl(const TransformerConfig& c, bool cross, int memory_dim) : cross_(cross) {
  ln_self_ = register_module("ln_self", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c.hidden})));
  self_attn_ = register_module("self_attn", MultiHeadAttention(c.hidden, c.heads, c.hidden));
  if (cross_) {
    ln_cross_ = register_module("ln_cross", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c.hidden})));
    cross_attn_ = register_module("cross_attn", MultiHeadAttention(c.hidden, c.heads, memory_dim));
  }
  ln_ff_ = register_module("ln_ff", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c.hidden})));
  ff1_ = register_module("ff1", torch::nn::Linear(c.hidden, c.intermediate));
  ff2_ = register_module("ff2", torch::nn::Linear(c.intermediate, c.hidden));
}

Tensor TransformerLayerImpl::forward(Tensor x, const Tensor& valid, const Tensor& memory, const Tensor& memory_valid) {
  Tensor h = ln_self_->forward(x);
  x = x + self_attn_->forward(h, h, valid);
  if (cross_) x = x + cross_attn_->forward(ln_cross_->forward(x), memory, memory_valid);
  return x + ff2_->forward(F::gelu(ff1_->forward(ln_ff_->forward(x))));
}

TransformerStackImpl::TransformerStackImpl(const TransformerConfig& c, int in_dim, int out_dim, bool cross,
                                           int memory_dim) {
  c.validate("transformer");
  if (in_dim != c.hidden) in_proj_ = register_module("in_proj", torch::nn::Linear(in_dim, c.hidden));
  if (out_dim != c.hidden) out_proj_ = register_module("out_proj", torch::nn::Linear(c.hidden, out_dim));
  layers_ = register_module("layers", torch::nn::ModuleList());
  for (int i = 0; i < c.layers; ++i) layers_->push_back(TransformerLayer(c, cross, memory_dim));
  final_ln_ = register_module("final_ln", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c.hidden})));
}

Tensor TransformerStackImpl::forward(Tensor x, const Tensor& valid, const Tensor& memory, const Tensor& memory_valid) {
  if (in_proj_) x = in_proj_->forward(x);
  for (auto& layer : *layers_) x = layer->as<TransformerLayer>()->forward(x, valid, memory, memory_valid);
  x = final_ln_->forward(x);
  if (out_proj_) x = out_proj_->forward(x);
  return x;
}

LocalCnnImpl::LocalCnnImpl(const LocalEncoderConfig& config) : config_(config) {
  config_.validate();
  int in = 1;
  for (int s = 0; s < 4; ++s) {
    const int out = config_.channels[s];
    const int k = config_.temporal_kernels[s];
    Stage st;
    st.temporal_kernel = k;
    const std::string p = "stage" + std::to_string(s);
    st.conv_a = register_module(
        p + "_conv_a", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, {k, 3, 3}).stride({1, 2, 2}).padding({0, 1, 1})));
    st.norm_a = register_module(p + "_norm_a", torch::nn::GroupNorm(norm_groups(out), out));
    st.conv_b = register_module(
        p + "_conv_b", torch::nn::Conv3d(torch::nn::Conv3dOptions(out, out, {1, 3, 3}).padding({0, 1, 1})));
    st.norm_b = register_module(p + "_norm_b", torch::nn::GroupNorm(norm_groups(out), out));
    st.shortcut = register_module(
        p + "_shortcut", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, {1, 1, 1}).stride({1, 2, 2})));
    stages_.push_back(st);
    in = out;
  }
}

Tensor LocalCnnImpl::forward(const Tensor& frames) {
  require(frames.dim() == 4, ErrorCategory::invalid_argument, "local encoder: expected [B, N, H, W] frames");
  require(frames.size(2) % 16 == 0 && frames.size(3) % 16 == 0, ErrorCategory::invalid_argument,
          "local encoder: H and W must be divisible by 16, got " + std::to_string(frames.size(2)) + "x" +
              std::to_string(frames.size(3)));
  require(frames.size(1) >= 1, ErrorCategory::invalid_argument, "local encoder: need at least one frame");
  Tensor x = frames.unsqueeze(1);  // [B, 1, N, H, W]
  for (auto& st : stages_) {
    const int k = st.temporal_kernel;
    const int front = config_.causal ? k - 1 : (k - 1) / 2;
    const int back = config_.causal ? 0 : (k - 1) / 2;
    Tensor padded = (front || back) ? torch::constant_pad_nd(x, {0, 0, 0, 0, front, back}) : x;
    Tensor y = F::silu(frame_norm(st.norm_a, st.conv_a->forward(padded)));
    y = frame_norm(st.norm_b, st.conv_b->forward(y));
    x = F::silu(y + st.shortcut->forward(x));
  }
  return x.permute({0, 2, 1, 3, 4}).contiguous();
}

AttentionPoolImpl::AttentionPoolImpl(int channels, int grid_h, int grid_w, int dim, int heads) : dim_(dim) {
  token_proj_ = register_module("token_proj", torch::nn::Linear(channels, dim));
  pos_embed_ = register_parameter("pos_embed", torch::randn({grid_h * grid_w, dim}) * 0.02);
  query_ = register_parameter("query", torch::randn({dim}) * 0.02);
  ln_tokens_ = register_module("ln_tokens", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", MultiHeadAttention(dim, heads, dim));
  ln_ff_ = register_module("ln_ff", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  ff1_ = register_module("ff1", torch::nn::Linear(dim, 2 * dim));
  ff2_ = register_module("ff2", torch::nn::Linear(2 * dim, dim));
  ln_out_ = register_module("ln_out", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

Tensor AttentionPoolImpl::forward(const Tensor& features) {
  const auto b = features.size(0), n = features.size(1), c = features.size(2);
  const auto hw = features.size(3) * features.size(4);
  require(hw == pos_embed_.size(0), ErrorCategory::shape_mismatch, "attention pool: feature grid size mismatch");
  Tensor tokens = features.reshape({b * n, c, hw}).transpose(1, 2);
  tokens = ln_tokens_->forward(token_proj_->forward(tokens) + pos_embed_);
  Tensor q = query_.view({1, 1, dim_}).expand({b * n, 1, dim_});
  Tensor x = q + attn_->forward(q, tokens, {});
  x = x + ff2_->forward(F::gelu(ff1_->forward(ln_ff_->forward(x))));
  return ln_out_->forward(x).view({b, n, dim_});
}

void register_backbone(const std::string& name, BackboneFactory factory) {
  std::lock_guard lock(registry_mutex());
  backbone_registry()[name] = std::move(factory);
}

std::shared_ptr<GlobalBackbone> make_backbone(const GlobalEncoderConfig& config) {
  std::lock_guard lock(registry_mutex());
  const auto it = backbone_registry().find(config.backbone);
  require(it != backbone_registry().end(), ErrorCategory::invalid_argument,
          "global encoder: unknown backbone '" + config.backbone + "'");
  return it->second(config);
}

SmallCnnBackbone::SmallCnnBackbone(const GlobalEncoderConfig& config) {
  torch::nn::Sequential seq;
  int in = 1;
  for (int c : config.channels) {
    seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, c, 3).stride(2).padding(1)));
    seq->push_back(torch::nn::GroupNorm(norm_groups(c), c));
    seq->push_back(torch::nn::SiLU());
    in = c;
  }
  features_ = register_module("features", seq);
  const int grid = (config.input_height / 16) * (config.input_width / 16);
  proj_ = register_module("proj", torch::nn::Linear(in * grid, config.feature_dim));
}

Tensor SmallCnnBackbone::forward(const Tensor& images) {
  return proj_->forward(features_->forward(images).flatten(1));
}

GlobalEncoderImpl::GlobalEncoderImpl(const GlobalEncoderConfig& config) : config_(config) {
  config_.validate();
  backbone_ = register_module("backbone", make_backbone(config_));
  temporal_ = register_module("temporal",
                              TransformerStack(config_.temporal, config_.feature_dim, config_.feature_dim));
}

Tensor GlobalEncoderImpl::backbone_features(const Tensor& frames) {
  require(frames.dim() == 4, ErrorCategory::invalid_argument, "global encoder: expected [B, L, h, w] frames");
  require(frames.size(2) == config_.input_height && frames.size(3) == config_.input_width,
          ErrorCategory::invalid_argument,
          "global encoder: expected " + std::to_string(config_.input_height) + "x" +
              std::to_string(config_.input_width) + " frames, got " + std::to_string(frames.size(2)) + "x" +
              std::to_string(frames.size(3)));
  const auto b = frames.size(0), l = frames.size(1);
  const Tensor f = backbone_->forward(frames.reshape({b * l, 1, frames.size(2), frames.size(3)}));
  return f.view({b, l, -1});
}

Tensor GlobalEncoderImpl::forward(const Tensor& frames, const Tensor& positions, const Tensor& valid) {
  Tensor x = backbone_features(frames);
  const Tensor pos = positions.defined() ? positions.to(x.dtype()) : default_positions(x);
  x = x + sinusoidal_encoding(pos, config_.feature_dim);
  return temporal_->forward(x, valid);
}

FusionImpl::FusionImpl(const FusionConfig& config, int dim) : config_(config), dim_(dim) {
  config_.validate();
  interposer_ = register_module("interposer", TransformerStack(config_.interposer, dim, dim));
  decoder_ = register_module("decoder", TransformerStack(config_.decoder, dim, dim, true, dim));
  out_ = register_module("out", small_linear(dim, dim, 1e-2));
}

Tensor FusionImpl::forward(const Tensor& local, const Tensor& local_positions, const Tensor& local_valid,
                           const Tensor& global, const Tensor& global_positions, const Tensor& global_valid) {
  require(local.size(1) >= 2, ErrorCategory::invalid_argument, "fusion: need at least two local states");
  require(global.size(1) >= 1, ErrorCategory::invalid_argument, "fusion: need at least one global state");
  const double scale = 1.0 / config_.global_stride;
  const Tensor lp = local_positions.defined() ? local_positions.to(local.dtype()) : default_positions(local);
  const Tensor gp = global_positions.defined() ? global_positions.to(global.dtype()) : default_positions(global);
  Tensor x = interposer_->forward(local + sinusoidal_encoding(lp * scale, dim_), local_valid);
  const Tensor memory = global + sinusoidal_encoding(gp * scale, dim_);
  x = decoder_->forward(x, local_valid, memory, global_valid);
  return local + out_->forward(x);
}

Tensor head_forward(torch::nn::Linear& head, const Tensor& states) {
  require(states.dim() == 3 && states.size(1) >= 2, ErrorCategory::invalid_argument,
          "head: need at least two states per sequence");
  return head->forward(states.narrow(1, 0, states.size(1) - 1));
}

DualTrackModelImpl::DualTrackModelImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int gh = config_.image_height / 16, gw = config_.image_width / 16;
  const int c = config_.local.channels.back();
  const int d = config_.local.pooled_dim;
  local_cnn = register_module("local_cnn", LocalCnn(config_.local));
  local_temp_head = register_module("local_temp_head", torch::nn::Linear(c * gh * gw, 6));
  local_pool = register_module("local_pool", AttentionPool(c, gh, gw, d, config_.local.pool_heads));
  local_head = register_module("local_head", torch::nn::Linear(d, 6));
  global_encoder = register_module("global_encoder", GlobalEncoder(config_.global));
  global_head = register_module("global_head", torch::nn::Linear(d, 6));
  fusion = register_module("fusion", Fusion(config_.fusion, d));
  fusion_head = register_module("fusion_head", torch::nn::Linear(d, 6));
  coupled_temporal = register_module("coupled_temporal", TransformerStack(config_.coupled, d, d));
  coupled_out = register_module("coupled_out", small_linear(d, d, 1e-2));
  coupled_head = register_module("coupled_head", torch::nn::Linear(d, 6));
}

Tensor DualTrackModelImpl::local_features(const Tensor& frames) { return local_cnn->forward(frames); }

Tensor DualTrackModelImpl::local_embed(const Tensor& features) { return local_pool->forward(features); }

Tensor DualTrackModelImpl::predict_local_cnn(const Tensor& features) {
  return head_forward(local_temp_head, features.flatten(2));
}

Tensor DualTrackModelImpl::predict_local_only(const Tensor& features) {
  return head_forward(local_head, local_embed(features));
}

Tensor DualTrackModelImpl::predict_global(const Tensor& global_frames, const Tensor& global_positions,
                                          const Tensor& global_valid) {
  return head_forward(global_head, global_encoder->forward(global_frames, global_positions, global_valid));
}

Tensor DualTrackModelImpl::predict_coupled(const Tensor& features, const Tensor& valid) {
  const Tensor e = local_embed(features);
  const Tensor pos = default_positions(e);
  const Tensor h = coupled_temporal->forward(e + sinusoidal_encoding(pos, config_.local.pooled_dim), valid);
  return head_forward(coupled_head, e + coupled_out->forward(h));
}

Tensor DualTrackModelImpl::predict_dualtrack(const Tensor& features, const Tensor& valid, const Tensor& global_frames,
                                             const Tensor& global_positions, const Tensor& global_valid) {
  const Tensor e = local_embed(features);
  const Tensor g = global_encoder->forward(global_frames, global_positions, global_valid);
  return head_forward(fusion_head, fusion->forward(e, {}, valid, g, global_positions, global_valid));
}

Tensor DualTrackModelImpl::forward(const Tensor& frames) {
  require(frames.dim() == 3 && frames.size(0) >= 2, ErrorCategory::invalid_argument,
          "model: expected [N, H, W] frames with N >= 2");
  const GlobalInput g = make_global_input(frames, config_.global, config_.fusion.global_stride);
  const Tensor features = local_features(frames.unsqueeze(0));
  return predict_dualtrack(features, {}, g.frames.unsqueeze(0), g.positions.unsqueeze(0), {}).squeeze(0);
}

GlobalInput make_global_input(const Tensor& frames, const GlobalEncoderConfig& config, int stride) {
  const int n = static_cast<int>(frames.size(0));
  const std::vector<int> idx = subsample_evenly(n, stride);
  const Tensor index = torch::tensor(std::vector<int64_t>(idx.begin(), idx.end()), torch::kLong);
  Tensor picked = frames.index_select(0, index);
  if (picked.size(1) != config.input_height || picked.size(2) != config.input_width) {
    const Tensor src = picked.to(torch::kFloat).contiguous();
    FrameStack stack(static_cast<int>(src.size(0)), static_cast<int>(src.size(1)), static_cast<int>(src.size(2)));
    std::copy_n(src.data_ptr<float>(), stack.data.size(), stack.data.begin());
    FrameStack small = area_resize(stack, config.input_height, config.input_width);
    picked = torch::from_blob(small.data.data(), {small.count, small.height, small.width}, torch::kFloat)
                 .clone()
                 .to(frames.dtype());
  }
  return {picked, index.to(frames.dtype())};
}

std::int64_t count_parameters(torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

std::vector<std::string> submodule_names() {
  return {"local_cnn",      "local_temp_head", "local_pool",  "local_head",       "global_encoder", "global_head",
          "fusion",         "fusion_head",     "coupled_temporal", "coupled_out", "coupled_head"};
}

}  // namespace dualtrack
