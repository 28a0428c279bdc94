#include "refsketch/extractors.hpp"

#include <algorithm>

#include "refsketch/archive.hpp"
#include "refsketch/errors.hpp"
#include "refsketch/imaging.hpp"

namespace refsketch {

namespace {

namespace F = torch::nn::functional;

torch::Tensor to_three_channels(const torch::Tensor& images) {
  if (images.size(1) == 3) return images;
  if (images.size(1) == 1) return images.expand({-1, 3, -1, -1});
  throw Error(ErrorKind::ExtractorShapeMismatch, "expected 1 or 3 input channels");
}

torch::Tensor luminance(const torch::Tensor& images) {
  return images.size(1) == 3 ? to_gray(images) : images;
}

void require_batch(const torch::Tensor& images) {
  if (!images.defined() || images.dim() != 4) {
    throw Error(ErrorKind::ExtractorShapeMismatch, "extractor input must be NxCxHxW");
  }
}

void load_frozen(torch::nn::Module& module, const std::filesystem::path& weights,
                 const std::string& what) {
  if (weights.empty() || !std::filesystem::exists(weights)) {
    throw Error(ErrorKind::ExtractorUnavailable,
                what + " weights not found at '" + weights.string() +
                    "'; use an analytic extractor (identity, sobel, cell-mean, grid-pool) "
                    "for tests");
  }
  TensorArchive::load(weights).get_module("", module);
  module.eval();
  for (auto& p : module.parameters()) p.set_requires_grad(false);
}

torch::nn::Conv2d conv3(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

}  // namespace

std::vector<torch::Tensor> IdentityExtractor::apply(const torch::Tensor& images) const {
  require_batch(images);
  return {images};
}

SobelEdgeExtractor::SobelEdgeExtractor() {
  auto gx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}).view({1, 1, 3, 3});
  auto gy = gx.transpose(2, 3);
  kernels_ = torch::cat({gx, gy}, 0) / 8.0;  // 2×1×3×3, unit response to a unit ramp
}

std::vector<torch::Tensor> SobelEdgeExtractor::apply(const torch::Tensor& images) const {
  require_batch(images);
  auto gray = luminance(images);
  auto padded = F::pad(gray, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  auto grads = F::conv2d(padded, kernels_.to(gray.options()));
  auto magnitude = torch::sqrt(grads.pow(2).sum(1, /*keepdim=*/true) + 1e-12);
  return {1.0 - 2.0 * torch::tanh(4.0 * magnitude)};
}

std::vector<torch::Tensor> CellMeanExtractor::apply(const torch::Tensor& images) const {
  require_batch(images);
  return {F::avg_pool2d(images, F::AvgPool2dFuncOptions(cell_).stride(cell_))};
}

std::vector<torch::Tensor> GridPoolExtractor::apply(const torch::Tensor& images) const {
  require_batch(images);
  return {F::adaptive_avg_pool2d(images, F::AdaptiveAvgPool2dFuncOptions(grid_))};
}

std::vector<torch::Tensor> PatchExtractor::apply(const torch::Tensor& images) const {
  require_batch(images);
  return {torch::pixel_unshuffle(images, patch_)};
}

std::vector<std::string> Vgg16Extractor::default_line_taps() {
  return {"relu1_2", "relu2_2", "relu3_3", "relu4_3"};
}

Vgg16Extractor::Vgg16Extractor(const std::filesystem::path& weights, std::vector<std::string> taps)
    : taps_(std::move(taps)) {
  if (taps_.empty()) taps_ = default_line_taps();
  const std::vector<std::pair<std::string, int64_t>> known{
      {"relu1_2", 3}, {"relu2_2", 8}, {"relu3_3", 15}, {"relu4_3", 22}, {"relu5_3", 29},
      {"pool5", 30}};
  for (const auto& tap : taps_) {
    auto it = std::find_if(known.begin(), known.end(), [&](const auto& k) { return k.first == tap; });
    if (it == known.end()) throw Error(ErrorKind::InvalidConfig, "unknown VGG16 tap '" + tap + "'");
    tap_indices_.push_back(it->second);
  }

  // Channel plan of the 13 conv layers; 0 marks a 2×2 max pool.
  const std::vector<int64_t> plan{64, 64, 0, 128, 128, 0, 256, 256, 256, 0,
                                  512, 512, 512, 0, 512, 512, 512, 0};
  net_ = std::make_shared<torch::nn::Module>();
  features_ = torch::nn::Sequential();
  int64_t channels = 3;
  for (int64_t out : plan) {
    if (out == 0) {
      features_->push_back(torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2).stride(2)));
    } else {
      features_->push_back(conv3(channels, out));
      features_->push_back(torch::nn::ReLU());
      channels = out;
    }
  }
  net_->register_module("features", features_);
  load_frozen(*net_, weights, "VGG16");
}

std::vector<torch::Tensor> Vgg16Extractor::apply(const torch::Tensor& images) const {
  require_batch(images);
  auto x = (to_three_channels(images) + 1.0) * 0.5;
  auto mean = torch::tensor({0.485, 0.456, 0.406}, x.options()).view({1, 3, 1, 1});
  auto std = torch::tensor({0.229, 0.224, 0.225}, x.options()).view({1, 3, 1, 1});
  x = (x - mean) / std;

  const int64_t last = *std::max_element(tap_indices_.begin(), tap_indices_.end());
  std::vector<torch::Tensor> outputs(taps_.size());
  int64_t index = 0;
  for (auto& layer : *features_) {
    if (index > last) break;
    x = layer.forward(x);
    for (size_t t = 0; t < tap_indices_.size(); ++t) {
      if (tap_indices_[t] == index) outputs[t] = x;
    }
    ++index;
  }
  return outputs;
}

std::vector<torch::Tensor> Vgg16Extractor::parameters() const { return net_->parameters(); }

HedExtractor::HedExtractor(const std::filesystem::path& weights) {
  net_ = std::make_shared<torch::nn::Module>();
  const std::vector<std::vector<int64_t>> stage_plan{
      {64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  int64_t channels = 3;
  for (size_t s = 0; s < stage_plan.size(); ++s) {
    torch::nn::Sequential stage;
    if (s > 0) stage->push_back(torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2).stride(2)));
    for (int64_t out : stage_plan[s]) {
      stage->push_back(conv3(channels, out));
      stage->push_back(torch::nn::ReLU());
      channels = out;
    }
    stages_.push_back(net_->register_module("stage" + std::to_string(s + 1), stage));
    sides_.push_back(net_->register_module(
        "side" + std::to_string(s + 1),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 1, 1))));
  }
  fuse_ = net_->register_module("fuse", torch::nn::Conv2d(torch::nn::Conv2dOptions(5, 1, 1)));
  load_frozen(*net_, weights, "HED");
}

std::vector<torch::Tensor> HedExtractor::apply(const torch::Tensor& images) const {
  require_batch(images);
  // Caffe-style BGR input in 0..255 with the per-channel means subtracted.
  auto rgb = (to_three_channels(images) + 1.0) * 127.5;
  auto bgr = rgb.flip({1});
  auto mean = torch::tensor({104.00698793, 116.66876762, 122.67891434}, bgr.options())
                  .view({1, 3, 1, 1});
  auto x = bgr - mean;
  const std::vector<int64_t> size{images.size(2), images.size(3)};
  std::vector<torch::Tensor> sides;
  for (size_t s = 0; s < stages_.size(); ++s) {
    x = stages_[s]->forward(x);
    auto side = sides_[s]->forward(x);
    sides.push_back(F::interpolate(side, F::InterpolateFuncOptions()
                                             .size(size)
                                             .mode(torch::kBilinear)
                                             .align_corners(false)));
  }
  auto p = torch::sigmoid(fuse_->forward(torch::cat(sides, 1)));
  return {1.0 - 2.0 * p};
}

std::vector<torch::Tensor> HedExtractor::parameters() const { return net_->parameters(); }

ExtractorPtr make_extractor(const std::string& kind, const std::filesystem::path& weights,
                            const std::vector<std::string>& taps) {
  if (kind == "identity") return std::make_shared<IdentityExtractor>();
  if (kind == "sobel") return std::make_shared<SobelEdgeExtractor>();
  if (kind == "cell-mean") return std::make_shared<CellMeanExtractor>();
  if (kind == "grid-pool") return std::make_shared<GridPoolExtractor>();
  if (kind == "patches") return std::make_shared<PatchExtractor>();
  if (kind == "vgg16") return std::make_shared<Vgg16Extractor>(weights, taps);
  if (kind == "hed") return std::make_shared<HedExtractor>(weights);
  throw Error(ErrorKind::InvalidConfig, "unknown extractor kind '" + kind + "'");
}

torch::Tensor extract_vectors(const FeatureExtractor& extractor, const torch::Tensor& images) {
  auto taps = extractor.apply(images);
  if (taps.empty()) throw Error(ErrorKind::ExtractorShapeMismatch, "extractor produced no taps");
  return taps.back().reshape({images.size(0), -1});
}

}  // namespace refsketch
