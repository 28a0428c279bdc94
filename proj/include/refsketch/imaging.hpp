#pragma once

// Raster I/O and the tensor conventions shared by every other module.
//
// Images are float tensors laid out C×H×W with values in [-1, 1]; an 8-bit
// pixel p maps to 2p/255 - 1. Sketches are single-channel with +1 as the
// white background and -1 as the darkest line. Batched helpers accept
// N×C×H×W tensors as well.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <variant>

namespace refsketch {

inline constexpr int64_t kMinColorSide = 16;
inline constexpr int64_t kMinResizeSide = 16;

/// Luminance weights applied in [-1, 1] space (they sum to one).
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

struct Size2 {
  int64_t height = 0;
  int64_t width = 0;
};

/// 3×H×W color raster, validated on construction.
class ColorImage {
 public:
  explicit ColorImage(torch::Tensor data);

  const torch::Tensor& data() const noexcept { return data_; }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }

 private:
  torch::Tensor data_;
};

/// 1×H×W line drawing, validated on construction.
class SketchImage {
 public:
  explicit SketchImage(torch::Tensor data);

  const torch::Tensor& data() const noexcept { return data_; }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }

 private:
  torch::Tensor data_;
};

/// Single-channel luminance of a color image; the content-encoder input.
class GrayContent {
 public:
  explicit GrayContent(torch::Tensor data);

  const torch::Tensor& data() const noexcept { return data_; }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }

 private:
  torch::Tensor data_;
};

enum class ImageMode { Color, Sketch };

using LoadedImage = std::variant<ColorImage, SketchImage>;

LoadedImage load_image(const std::filesystem::path& path, ImageMode mode);
ColorImage load_color(const std::filesystem::path& path);
SketchImage load_sketch(const std::filesystem::path& path);

/// True when the file decodes to a single-channel raster.
bool is_single_channel_file(const std::filesystem::path& path);

/// 8-bit to [-1, 1]: p -> 2p/255 - 1.
torch::Tensor bytes_to_unit(const torch::Tensor& bytes);
/// [-1, 1] to 8-bit with round-half-up and clamping.
torch::Tensor unit_to_bytes(const torch::Tensor& unit);

/// Luminance contraction on C×H×W or N×C×H×W (C = 3).
torch::Tensor to_gray(const torch::Tensor& color);
GrayContent to_gray(const ColorImage& color);

/// Bilinear resampling of C×H×W or N×C×H×W, clamped to [-1, 1].
torch::Tensor resize(const torch::Tensor& image, Size2 target);
ColorImage resize(const ColorImage& image, Size2 target);
SketchImage resize(const SketchImage& image, Size2 target);
GrayContent resize(const GrayContent& image, Size2 target);

/// Writes an 8-bit PNG (grayscale for one channel, RGB for three).
void save_image(const torch::Tensor& image, const std::filesystem::path& path);
void save_image(const ColorImage& image, const std::filesystem::path& path);
void save_image(const SketchImage& image, const std::filesystem::path& path);

}  // namespace refsketch
