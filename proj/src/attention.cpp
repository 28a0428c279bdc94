#include "refsketch/attention.hpp"

#include "refsketch/errors.hpp"

namespace refsketch {

namespace {

void require_4d(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 4) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + " must be NxCxHxW");
  }
}

}  // namespace

std::pair<torch::Tensor, torch::Tensor> channel_moments(const torch::Tensor& features) {
  require_4d(features, "feature map");
  auto mean = features.mean({2, 3}, /*keepdim=*/true);
  auto var = (features - mean).pow(2).mean({2, 3}, /*keepdim=*/true);
  // The floor keeps sqrt differentiable on constant channels; it is far below eps.
  auto std = torch::sqrt(var + 1e-20);
  return {mean, std};
}

torch::Tensor adain(const torch::Tensor& content, const torch::Tensor& style, double eps) {
  require_4d(content, "adain content");
  require_4d(style, "adain style");
  if (content.size(1) != style.size(1)) {
    throw Error(ErrorKind::ChannelMismatch,
                "adain content has " + std::to_string(content.size(1)) +
                    " channels, style has " + std::to_string(style.size(1)));
  }
  if (content.size(0) != style.size(0)) {
    throw Error(ErrorKind::ShapeMismatch, "adain batch sizes differ");
  }
  auto [content_mean, content_std] = channel_moments(content);
  auto [style_mean, style_std] = channel_moments(style);
  return style_std * (content - content_mean) / (content_std + eps) + style_mean;
}

SpatialAttentionImpl::SpatialAttentionImpl() {
  conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(2, 1, 3).padding(1)));
}

torch::Tensor SpatialAttentionImpl::forward(const torch::Tensor& features) {
  require_4d(features, "spatial attention input");
  auto avg = features.mean(1, /*keepdim=*/true);
  auto max = std::get<0>(features.max(1, /*keepdim=*/true));
  return torch::sigmoid(conv->forward(torch::cat({avg, max}, 1)));
}

ChannelAttentionImpl::ChannelAttentionImpl(const ChannelAttentionOptions& opts) : options(opts) {
  if (options.channels() < 1 || options.reduction() < 1 ||
      options.channels() % options.reduction() != 0) {
    throw Error(ErrorKind::ReductionMismatch,
                "channel count " + std::to_string(options.channels()) +
                    " is not divisible by reduction " + std::to_string(options.reduction()));
  }
  squeeze = register_module("squeeze", torch::nn::Linear(options.channels(), hidden_width()));
  expand = register_module("expand", torch::nn::Linear(hidden_width(), options.channels()));
}

torch::Tensor ChannelAttentionImpl::logits(const torch::Tensor& features) {
  require_4d(features, "channel attention input");
  if (features.size(1) != options.channels()) {
    throw Error(ErrorKind::ShapeMismatch,
                "channel attention built for " + std::to_string(options.channels()) +
                    " channels, got " + std::to_string(features.size(1)));
  }
  auto mlp = [this](const torch::Tensor& pooled) {
    auto hidden = squeeze->forward(pooled);
    if (options.activation() == HiddenActivation::Relu) hidden = torch::relu(hidden);
    return expand->forward(hidden);
  };
  auto avg = features.mean({2, 3});
  auto max = features.amax({2, 3});
  return mlp(avg) + mlp(max);
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& features) {
  auto gate = torch::sigmoid(logits(features));
  return gate.unsqueeze(-1).unsqueeze(-1);
}

torch::Tensor fuse_with_gates(const torch::Tensor& content, const torch::Tensor& spatial_map,
                              const torch::Tensor& style, const torch::Tensor& channel_map) {
  return adain(content * spatial_map, style * channel_map);
}

torch::Tensor attended_fusion(const torch::Tensor& content, const torch::Tensor& style,
                              SpatialAttention& spatial, ChannelAttention& channel) {
  return fuse_with_gates(content, spatial->forward(content), style, channel->forward(style));
}

}  // namespace refsketch
