#pragma once

// Spatial attention, channel attention and adaptive instance normalization.
//
// All feature maps are N×C×H×W. The spatial gate is N×1×H×W and is applied
// uniformly across channels; the channel gate is N×C×1×1 and is applied
// uniformly across positions.

#include <torch/torch.h>

#include <cstdint>

namespace refsketch {

inline constexpr double kAdainEpsilon = 1e-5;
inline constexpr int64_t kDefaultReduction = 16;

/// Re-scales each content channel to the per-channel mean and population std
/// of the matching style channel:
///   out = std_s * (content - mean_c) / (std_c + eps) + mean_s
/// Spatial sizes of content and style may differ; channel counts may not.
torch::Tensor adain(const torch::Tensor& content, const torch::Tensor& style,
                    double eps = kAdainEpsilon);

/// Per-channel spatial mean and population std, each N×C×1×1.
std::pair<torch::Tensor, torch::Tensor> channel_moments(const torch::Tensor& features);

/// sigmoid(conv3x3([avg_c(x); max_c(x)])) with a 2->1 kernel, padding 1.
class SpatialAttentionImpl : public torch::nn::Module {
 public:
  SpatialAttentionImpl();

  torch::Tensor forward(const torch::Tensor& features);

  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(SpatialAttention);

enum class HiddenActivation { Relu, Identity };

struct ChannelAttentionOptions {
  ChannelAttentionOptions(int64_t channels) : channels_(channels) {}  // NOLINT
  TORCH_ARG(int64_t, channels);
  TORCH_ARG(int64_t, reduction) = kDefaultReduction;
  TORCH_ARG(HiddenActivation, activation) = HiddenActivation::Relu;
};

/// sigmoid(MLP(avgpool(x)) + MLP(maxpool(x))) with a shared C -> C/r -> C MLP.
class ChannelAttentionImpl : public torch::nn::Module {
 public:
  explicit ChannelAttentionImpl(const ChannelAttentionOptions& options);

  torch::Tensor forward(const torch::Tensor& features);
  /// Pre-sigmoid sum of the two MLP branches.
  torch::Tensor logits(const torch::Tensor& features);

  int64_t hidden_width() const { return options.channels() / options.reduction(); }

  ChannelAttentionOptions options;
  torch::nn::Linear squeeze{nullptr};
  torch::nn::Linear expand{nullptr};
};
TORCH_MODULE(ChannelAttention);

/// adain(content ⊙ spatial_map, style ⊙ channel_map) for precomputed gates.
torch::Tensor fuse_with_gates(const torch::Tensor& content, const torch::Tensor& spatial_map,
                              const torch::Tensor& style, const torch::Tensor& channel_map);

/// Gates content spatially and style per channel, then aligns their moments.
torch::Tensor attended_fusion(const torch::Tensor& content, const torch::Tensor& style,
                              SpatialAttention& spatial, ChannelAttention& channel);

}  // namespace refsketch
