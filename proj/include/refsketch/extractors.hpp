#pragma once

// Fixed (non-trainable) feature extractors behind one interface. The line
// loss uses an edge detector followed by perceptual taps, evaluation uses a
// backbone for FID/LPIPS features, and curation uses a backbone for
// clustering. Analytic extractors (identity, Sobel, pooling) need no weights;
// the VGG16 and HED networks load weights from a TensorArchive.

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace refsketch {

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual std::string name() const = 0;
  virtual std::vector<std::string> taps() const = 0;
  /// Channel count the extractor expects, or 0 when any count is accepted.
  virtual int64_t input_channels() const { return 0; }
  /// images: N×C×H×W in [-1, 1]. One N×C'×H'×W' tensor per tap, in tap order.
  virtual std::vector<torch::Tensor> apply(const torch::Tensor& images) const = 0;
  /// Fixed parameters, for freeze audits. Empty for analytic extractors.
  virtual std::vector<torch::Tensor> parameters() const { return {}; }
};

using ExtractorPtr = std::shared_ptr<const FeatureExtractor>;

/// Returns its input as the single tap.
class IdentityExtractor final : public FeatureExtractor {
 public:
  std::string name() const override { return "identity"; }
  std::vector<std::string> taps() const override { return {"identity"}; }
  std::vector<torch::Tensor> apply(const torch::Tensor& images) const override;
};

/// Sobel gradient magnitude of the luminance, rendered as a sketch:
/// 1 - 2 tanh(|∇|), so edges are dark on a white background.
class SobelEdgeExtractor final : public FeatureExtractor {
 public:
  SobelEdgeExtractor();
  std::string name() const override { return "sobel"; }
  std::vector<std::string> taps() const override { return {"edges"}; }
  std::vector<torch::Tensor> apply(const torch::Tensor& images) const override;

 private:
  torch::Tensor kernels_;
};

/// Mean over non-overlapping cell×cell blocks.
class CellMeanExtractor final : public FeatureExtractor {
 public:
  explicit CellMeanExtractor(int64_t cell = 8) : cell_(cell) {}
  std::string name() const override { return "cell-mean"; }
  std::vector<std::string> taps() const override { return {"cell_mean"}; }
  std::vector<torch::Tensor> apply(const torch::Tensor& images) const override;

 private:
  int64_t cell_;
};

/// Adaptive average pool to a grid×grid map.
class GridPoolExtractor final : public FeatureExtractor {
 public:
  explicit GridPoolExtractor(int64_t grid = 8) : grid_(grid) {}
  std::string name() const override { return "grid-pool"; }
  std::vector<std::string> taps() const override { return {"grid_pool"}; }
  std::vector<torch::Tensor> apply(const torch::Tensor& images) const override;

 private:
  int64_t grid_;
};

/// Rearranges each patch×patch block into channels (space-to-depth), so a
/// per-position feature vector is a small image patch.
class PatchExtractor final : public FeatureExtractor {
 public:
  explicit PatchExtractor(int64_t patch = 4) : patch_(patch) {}
  std::string name() const override { return "patches"; }
  std::vector<std::string> taps() const override { return {"patches"}; }
  std::vector<torch::Tensor> apply(const torch::Tensor& images) const override;

 private:
  int64_t patch_;
};

/// VGG16 convolutional trunk in the torchvision layer order
/// ("features.<i>.weight"). Known taps: relu1_2, relu2_2, relu3_3, relu4_3,
/// relu5_3, pool5. Inputs with one channel are replicated to three, then
/// mapped from [-1, 1] to ImageNet-normalized values.
class Vgg16Extractor final : public FeatureExtractor {
 public:
  static std::vector<std::string> default_line_taps();

  Vgg16Extractor(const std::filesystem::path& weights, std::vector<std::string> taps);

  std::string name() const override { return "vgg16"; }
  std::vector<std::string> taps() const override { return taps_; }
  int64_t input_channels() const override { return 3; }
  std::vector<torch::Tensor> apply(const torch::Tensor& images) const override;
  std::vector<torch::Tensor> parameters() const override;

 private:
  std::shared_ptr<torch::nn::Module> net_;
  mutable torch::nn::Sequential features_{nullptr};
  std::vector<std::string> taps_;
  std::vector<int64_t> tap_indices_;
};

/// Holistically-nested edge detector: five VGG stages ("stage<k>.<i>"),
/// one 1×1 side output per stage ("side<k>"), bilinear upsampling, and a
/// 1×1 fusion ("fuse"). Output is the fused edge probability p rendered as
/// 1 - 2p (dark edges on white).
class HedExtractor final : public FeatureExtractor {
 public:
  explicit HedExtractor(const std::filesystem::path& weights);

  std::string name() const override { return "hed"; }
  std::vector<std::string> taps() const override { return {"edges"}; }
  int64_t input_channels() const override { return 3; }
  std::vector<torch::Tensor> apply(const torch::Tensor& images) const override;
  std::vector<torch::Tensor> parameters() const override;

 private:
  std::shared_ptr<torch::nn::Module> net_;
  mutable std::vector<torch::nn::Sequential> stages_;
  mutable std::vector<torch::nn::Conv2d> sides_;
  mutable torch::nn::Conv2d fuse_{nullptr};
};

/// Builds an extractor by kind: identity | sobel | cell-mean | grid-pool | patches |
/// vgg16 | hed. Network kinds require `weights`; missing weights raise
/// ExtractorUnavailable.
ExtractorPtr make_extractor(const std::string& kind, const std::filesystem::path& weights = {},
                            const std::vector<std::string>& taps = {});

/// Flattens the last tap of `extractor` into one row per image (N×D).
torch::Tensor extract_vectors(const FeatureExtractor& extractor, const torch::Tensor& images);

}  // namespace refsketch
