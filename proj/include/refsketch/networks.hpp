#pragma once

// Sketch generator, color generator, patch discriminator and the contrastive
// style encoder. Every network works on N×C×H×W batches in [-1, 1].
//
// Channel widths are expressed through a base width w: the published
// configuration is w = 64 (encoders 1→64→128→256→512, resblocks 1024→512,
// decoder 512→256→128→64→out). Smaller w keeps the same topology for
// CPU-scale experiments.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "refsketch/attention.hpp"

namespace refsketch {

inline constexpr int64_t kDefaultWidth = 64;
inline constexpr int64_t kDefaultResolution = 512;
inline constexpr int64_t kStyleEmbeddingSize = 128;
inline constexpr int64_t kStyleMinSide = 8;
inline constexpr int64_t kResblockCount = 4;

/// Conv (stride 1, "same" padding) + optional batch norm + optional ReLU.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int64_t in, int64_t out, int64_t kernel, bool norm, bool relu);

  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d norm{nullptr};
  bool relu;
  int64_t pad_before;
  int64_t pad_after;
};
TORCH_MODULE(ConvBlock);

struct GeneratorOptions {
  TORCH_ARG(int64_t, width) = kDefaultWidth;
  TORCH_ARG(int64_t, reduction) = kDefaultReduction;
  /// Model resolution; forward passes reject any other spatial size.
  TORCH_ARG(int64_t, resolution) = kDefaultResolution;
  /// When false the spatial/channel attention and the attended AdaIN branch
  /// are removed and each resblock consumes only the running features.
  TORCH_ARG(bool, attention) = true;
};

/// Four conv blocks: in→w (K7), w→2w, 2w→4w, 4w→8w (K3), all BN + ReLU.
torch::nn::Sequential make_encoder(int64_t in_channels, int64_t width);
/// 8w→4w (K4), 4w→2w (K7) with BN + ReLU, then 2w→w (K7), w→out (K7), tanh.
torch::nn::Sequential make_decoder(int64_t width, int64_t out_channels);

class SketchGeneratorImpl : public torch::nn::Module {
 public:
  explicit SketchGeneratorImpl(const GeneratorOptions& options = {});

  /// content: N×1×H×W gray content; reference: N×1×H×W sketch. Returns N×1×H×W.
  torch::Tensor forward(const torch::Tensor& content, const torch::Tensor& reference);

  GeneratorOptions options;
  torch::nn::Sequential content_encoder{nullptr};
  torch::nn::Sequential reference_encoder{nullptr};
  SpatialAttention spatial_attention{nullptr};
  ChannelAttention channel_attention{nullptr};
  torch::nn::ModuleList resblocks{nullptr};
  torch::nn::Sequential decoder{nullptr};
};
TORCH_MODULE(SketchGenerator);

class ColorGeneratorImpl : public torch::nn::Module {
 public:
  explicit ColorGeneratorImpl(const GeneratorOptions& options = {});

  /// sketch: N×1×H×W. Returns N×3×H×W.
  torch::Tensor forward(const torch::Tensor& sketch);

  GeneratorOptions options;
  torch::nn::Sequential encoder{nullptr};
  torch::nn::ModuleList resblocks{nullptr};
  torch::nn::Sequential decoder{nullptr};
};
TORCH_MODULE(ColorGenerator);

struct ConvGeometry {
  int64_t kernel;
  int64_t stride;
  int64_t padding;
};

/// Receptive field of one output unit of a conv stack: r += (k - 1) * jump.
int64_t receptive_field(const std::vector<ConvGeometry>& layers);

struct DiscriminatorOptions {
  TORCH_ARG(int64_t, width) = kDefaultWidth;
  TORCH_ARG(int64_t, resolution) = kDefaultResolution;
  TORCH_ARG(int64_t, in_channels) = 1;
};

/// C64-C128-C256-C512 PatchGAN, instance norm after the first layer,
/// LeakyReLU(0.2), single-channel logit head.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(const DiscriminatorOptions& options = {});

  /// Returns N×1×h×w real/fake logits.
  torch::Tensor forward(const torch::Tensor& sketch);

  static std::vector<ConvGeometry> geometry();
  static int64_t receptive_field() { return refsketch::receptive_field(geometry()); }

  DiscriminatorOptions options;
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

struct StyleEncoderOptions {
  TORCH_ARG(int64_t, width) = kDefaultWidth;
};

/// Shared-weight encoder for anchor/positive/negative: conv 1→w (K7 S1),
/// w→2w (K4 S2), 2w→4w (K4 S2), each BN + ReLU, adaptive average pool,
/// linear 4w→128.
class StyleEncoderImpl : public torch::nn::Module {
 public:
  explicit StyleEncoderImpl(const StyleEncoderOptions& options = {});

  /// N×1×H×W with H, W >= 8. Returns N×128.
  torch::Tensor forward(const torch::Tensor& sketch);

  StyleEncoderOptions options;
  torch::nn::Sequential features{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(StyleEncoder);

/// Zero-mean Gaussian (std 0.02) conv/linear weights, zero biases,
/// batch-norm scales around one.
void init_weights(torch::nn::Module& module);

/// eval() plus requires_grad(false) on every parameter.
void freeze(torch::nn::Module& module);
bool is_frozen(const torch::nn::Module& module);

struct LayerShape {
  std::string name;
  std::vector<int64_t> shape;
};
std::vector<LayerShape> layer_shapes(const torch::nn::Module& module);

/// Deep copy of parameters and buffers, keyed by name.
std::vector<std::pair<std::string, torch::Tensor>> snapshot_state(const torch::nn::Module& module);
bool same_state(const std::vector<std::pair<std::string, torch::Tensor>>& a,
                const std::vector<std::pair<std::string, torch::Tensor>>& b);

}  // namespace refsketch
