#pragma once

// Local encoder, global encoder, fusion decoder and prediction heads.
//
// Tensor layouts: frames [B, N, H, W]; local features [B, N, C, H/16, W/16];
// embeddings [B, N, D]; frame positions [B, N] (absolute frame index, float);
// validity masks [B, N] bool (true = real frame). Relative predictions
// [B, N-1, 6] in (tx, ty, tz, yaw, pitch, roll) order.

#include <functional>
#include <memory>
#include <string>

#include <torch/torch.h>

#include "dualtrack/config.hpp"

namespace dualtrack {

// [..., L] positions -> [..., L, dim]; sin on even channels, cos on odd.
torch::Tensor sinusoidal_encoding(const torch::Tensor& positions, int dim);

class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(int dim, int heads, int memory_dim);
  // key_valid may be undefined (all keys valid).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& memory, const torch::Tensor& key_valid);

 private:
  int heads_;
  torch::nn::Linear q_{nullptr}, k_{nullptr}, v_{nullptr}, o_{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

// Pre-norm block: self-attention, optional cross-attention, feed-forward.
class TransformerLayerImpl : public torch::nn::Module {
 public:
  TransformerLayerImpl(const TransformerConfig& config, bool cross, int memory_dim);
  torch::Tensor forward(torch::Tensor x, const torch::Tensor& valid, const torch::Tensor& memory,
                        const torch::Tensor& memory_valid);

 private:
  bool cross_;
  torch::nn::LayerNorm ln_self_{nullptr}, ln_cross_{nullptr}, ln_ff_{nullptr};
  MultiHeadAttention self_attn_{nullptr}, cross_attn_{nullptr};
  torch::nn::Linear ff1_{nullptr}, ff2_{nullptr};
};
TORCH_MODULE(TransformerLayer);

class TransformerStackImpl : public torch::nn::Module {
 public:
  TransformerStackImpl(const TransformerConfig& config, int in_dim, int out_dim, bool cross = false,
                       int memory_dim = 0);
  torch::Tensor forward(torch::Tensor x, const torch::Tensor& valid, const torch::Tensor& memory = {},
                        const torch::Tensor& memory_valid = {});

 private:
  torch::nn::Linear in_proj_{nullptr}, out_proj_{nullptr};
  torch::nn::ModuleList layers_;
  torch::nn::LayerNorm final_ln_{nullptr};
};
TORCH_MODULE(TransformerStack);

// Four residual stages, each halving H and W once; temporal kernels only in
// the first conv of a stage, so frame t sees frames within radius() of t.
class LocalCnnImpl : public torch::nn::Module {
 public:
  explicit LocalCnnImpl(const LocalEncoderConfig& config);
  // [B, N, H, W] -> [B, N, C, H/16, W/16]
  torch::Tensor forward(const torch::Tensor& frames);

 private:
  struct Stage {
    int temporal_kernel;
    torch::nn::Conv3d conv_a{nullptr}, conv_b{nullptr}, shortcut{nullptr};
    torch::nn::GroupNorm norm_a{nullptr}, norm_b{nullptr};
  };
  LocalEncoderConfig config_;
  std::vector<Stage> stages_;
};
TORCH_MODULE(LocalCnn);

// A learned query attends over the spatial grid of one frame's feature map.
class AttentionPoolImpl : public torch::nn::Module {
 public:
  AttentionPoolImpl(int channels, int grid_h, int grid_w, int dim, int heads);
  // [B, N, C, h, w] -> [B, N, dim]
  torch::Tensor forward(const torch::Tensor& features);

 private:
  int dim_;
  torch::nn::Linear token_proj_{nullptr}, ff1_{nullptr}, ff2_{nullptr};
  torch::Tensor pos_embed_, query_;
  torch::nn::LayerNorm ln_tokens_{nullptr}, ln_ff_{nullptr}, ln_out_{nullptr};
  MultiHeadAttention attn_{nullptr};
};
TORCH_MODULE(AttentionPool);

// One image in, one feature vector out. External backbones implement this.
class GlobalBackbone : public torch::nn::Module {
 public:
  // [M, 1, h, w] -> [M, feature_dim]
  virtual torch::Tensor forward(const torch::Tensor& images) = 0;
};

using BackboneFactory = std::function<std::shared_ptr<GlobalBackbone>(const GlobalEncoderConfig&)>;
void register_backbone(const std::string& name, BackboneFactory factory);
std::shared_ptr<GlobalBackbone> make_backbone(const GlobalEncoderConfig& config);

class SmallCnnBackbone : public GlobalBackbone {
 public:
  explicit SmallCnnBackbone(const GlobalEncoderConfig& config);
  torch::Tensor forward(const torch::Tensor& images) override;

 private:
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear proj_{nullptr};
};

class GlobalEncoderImpl : public torch::nn::Module {
 public:
  explicit GlobalEncoderImpl(const GlobalEncoderConfig& config);
  // [B, L, h, w] -> [B, L, C'], each frame on its own.
  torch::Tensor backbone_features(const torch::Tensor& frames);
  torch::Tensor forward(const torch::Tensor& frames, const torch::Tensor& positions, const torch::Tensor& valid);

 private:
  GlobalEncoderConfig config_;
  std::shared_ptr<GlobalBackbone> backbone_;
  TransformerStack temporal_{nullptr};
};
TORCH_MODULE(GlobalEncoder);

// Local states query global states; the decoder output is added back to the
// local embeddings.
class FusionImpl : public torch::nn::Module {
 public:
  FusionImpl(const FusionConfig& config, int dim);
  torch::Tensor forward(const torch::Tensor& local, const torch::Tensor& local_positions,
                        const torch::Tensor& local_valid, const torch::Tensor& global,
                        const torch::Tensor& global_positions, const torch::Tensor& global_valid);

 private:
  FusionConfig config_;
  int dim_;
  TransformerStack interposer_{nullptr}, decoder_{nullptr};
  torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(Fusion);

// States [B, N, D] -> [B, N-1, 6]; the last state has no successor.
torch::Tensor head_forward(torch::nn::Linear& head, const torch::Tensor& states);

class DualTrackModelImpl : public torch::nn::Module {
 public:
  explicit DualTrackModelImpl(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  torch::Tensor local_features(const torch::Tensor& frames);
  torch::Tensor local_embed(const torch::Tensor& features);

  // Stage heads. Positions and masks may be undefined (contiguous, all valid).
  torch::Tensor predict_local_cnn(const torch::Tensor& features);
  torch::Tensor predict_local_only(const torch::Tensor& features);
  torch::Tensor predict_global(const torch::Tensor& global_frames, const torch::Tensor& global_positions,
                               const torch::Tensor& global_valid);
  torch::Tensor predict_coupled(const torch::Tensor& features, const torch::Tensor& valid);
  torch::Tensor predict_dualtrack(const torch::Tensor& features, const torch::Tensor& valid,
                                  const torch::Tensor& global_frames, const torch::Tensor& global_positions,
                                  const torch::Tensor& global_valid);

  // Unbatched end-to-end forward: frames [N, H, W] -> [N-1, 6].
  torch::Tensor forward(const torch::Tensor& frames);

  LocalCnn local_cnn{nullptr};
  torch::nn::Linear local_temp_head{nullptr};
  AttentionPool local_pool{nullptr};
  torch::nn::Linear local_head{nullptr};
  GlobalEncoder global_encoder{nullptr};
  torch::nn::Linear global_head{nullptr};
  Fusion fusion{nullptr};
  torch::nn::Linear fusion_head{nullptr};
  TransformerStack coupled_temporal{nullptr};
  torch::nn::Linear coupled_out{nullptr};
  torch::nn::Linear coupled_head{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(DualTrackModel);

// Evenly spaced global frames of a full sweep at the global resolution.
struct GlobalInput {
  torch::Tensor frames;     // [L, h, w]
  torch::Tensor positions;  // [L]
};
GlobalInput make_global_input(const torch::Tensor& frames, const GlobalEncoderConfig& config, int stride);

std::int64_t count_parameters(torch::nn::Module& module);

// Top-level submodule names in registration order.
std::vector<std::string> submodule_names();

}  // namespace dualtrack
