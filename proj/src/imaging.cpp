#include "refsketch/imaging.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "refsketch/errors.hpp"

namespace refsketch {

namespace {

void check_unit_tensor(const torch::Tensor& t, int64_t channels, int64_t min_side,
                       const char* what) {
  if (!t.defined() || t.dim() != 3 || t.size(0) != channels) {
    throw Error(ErrorKind::InvalidImage, std::string(what) + " must be " +
                                             std::to_string(channels) + "xHxW");
  }
  if (!t.is_floating_point()) {
    throw Error(ErrorKind::InvalidImage, std::string(what) + " must be floating point");
  }
  if (t.size(1) < min_side || t.size(2) < min_side) {
    throw Error(ErrorKind::TooSmall, std::string(what) + " smaller than " +
                                         std::to_string(min_side) + " pixels");
  }
  auto detached = t.detach();
  if (!torch::isfinite(detached).all().item<bool>()) {
    throw Error(ErrorKind::InvalidImage, std::string(what) + " has non-finite values");
  }
  // One ulp of slack so values produced by float arithmetic at the endpoints pass.
  constexpr double kSlack = 1e-6;
  if (detached.min().item<double>() < -1.0 - kSlack ||
      detached.max().item<double>() > 1.0 + kSlack) {
    throw Error(ErrorKind::InvalidImage, std::string(what) + " values outside [-1, 1]");
  }
}

cv::Mat read_bgr(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorKind::MissingFile, path.string());
  }
  if (std::filesystem::is_regular_file(path) && std::filesystem::file_size(path) == 0) {
    throw Error(ErrorKind::ZeroSizeImage, path.string());
  }
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) {
    throw Error(ErrorKind::DecodeError, path.string());
  }
  if (img.rows == 0 || img.cols == 0) {
    throw Error(ErrorKind::ZeroSizeImage, path.string());
  }
  return img;
}

// HxWx3 BGR bytes -> 3xHxW RGB uint8 tensor.
torch::Tensor mat_to_rgb_bytes(const cv::Mat& bgr) {
  cv::Mat contiguous = bgr.isContinuous() ? bgr : bgr.clone();
  auto hwc = torch::from_blob(contiguous.data, {contiguous.rows, contiguous.cols, 3},
                              torch::kUInt8)
                 .clone();
  return hwc.permute({2, 0, 1}).flip({0}).contiguous();
}

torch::Tensor as_batch(const torch::Tensor& image) {
  if (image.dim() == 3) return image.unsqueeze(0);
  if (image.dim() == 4) return image;
  throw Error(ErrorKind::ShapeMismatch, "expected CxHxW or NxCxHxW tensor");
}

}  // namespace

ColorImage::ColorImage(torch::Tensor data) : data_(std::move(data)) {
  check_unit_tensor(data_, 3, kMinColorSide, "ColorImage");
}

SketchImage::SketchImage(torch::Tensor data) : data_(std::move(data)) {
  check_unit_tensor(data_, 1, 1, "SketchImage");
}

GrayContent::GrayContent(torch::Tensor data) : data_(std::move(data)) {
  check_unit_tensor(data_, 1, 1, "GrayContent");
}

torch::Tensor bytes_to_unit(const torch::Tensor& bytes) {
  return bytes.to(torch::kFloat32) * (2.0f / 255.0f) - 1.0f;
}

torch::Tensor unit_to_bytes(const torch::Tensor& unit) {
  auto scaled = (unit.detach().to(torch::kFloat64) + 1.0) * 127.5;
  return torch::floor(scaled + 0.5).clamp(0.0, 255.0).to(torch::kUInt8);
}

LoadedImage load_image(const std::filesystem::path& path, ImageMode mode) {
  auto rgb = bytes_to_unit(mat_to_rgb_bytes(read_bgr(path)));
  if (mode == ImageMode::Color) return ColorImage(rgb);
  return SketchImage(to_gray(rgb).clamp(-1.0, 1.0));
}

ColorImage load_color(const std::filesystem::path& path) {
  return std::get<ColorImage>(load_image(path, ImageMode::Color));
}

SketchImage load_sketch(const std::filesystem::path& path) {
  return std::get<SketchImage>(load_image(path, ImageMode::Sketch));
}

bool is_single_channel_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::MissingFile, path.string());
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw Error(ErrorKind::DecodeError, path.string());
  return img.channels() == 1;
}

torch::Tensor to_gray(const torch::Tensor& color) {
  auto batch = as_batch(color);
  if (batch.size(1) != 3) {
    throw Error(ErrorKind::ChannelMismatch, "to_gray expects three channels");
  }
  auto gray = batch.select(1, 0) * kLumaR + batch.select(1, 1) * kLumaG +
              batch.select(1, 2) * kLumaB;
  gray = gray.unsqueeze(1);
  return color.dim() == 3 ? gray.squeeze(0) : gray;
}

GrayContent to_gray(const ColorImage& color) {
  return GrayContent(to_gray(color.data()).clamp(-1.0, 1.0));
}

torch::Tensor resize(const torch::Tensor& image, Size2 target) {
  if (target.height < kMinResizeSide || target.width < kMinResizeSide) {
    throw Error(ErrorKind::InvalidTarget, "resize target must be at least 16x16");
  }
  auto batch = as_batch(image);
  if (batch.size(2) == target.height && batch.size(3) == target.width) {
    return image;
  }
  namespace F = torch::nn::functional;
  auto out = F::interpolate(batch, F::InterpolateFuncOptions()
                                       .size(std::vector<int64_t>{target.height, target.width})
                                       .mode(torch::kBilinear)
                                       .align_corners(false))
                 .clamp(-1.0, 1.0);
  return image.dim() == 3 ? out.squeeze(0) : out;
}

ColorImage resize(const ColorImage& image, Size2 target) {
  return ColorImage(resize(image.data(), target));
}

SketchImage resize(const SketchImage& image, Size2 target) {
  return SketchImage(resize(image.data(), target));
}

GrayContent resize(const GrayContent& image, Size2 target) {
  return GrayContent(resize(image.data(), target));
}

void save_image(const torch::Tensor& image, const std::filesystem::path& path) {
  if (image.dim() != 3 || (image.size(0) != 1 && image.size(0) != 3)) {
    throw Error(ErrorKind::InvalidImage, "save_image expects 1xHxW or 3xHxW");
  }
  auto bytes = unit_to_bytes(image.cpu());
  cv::Mat mat;
  if (bytes.size(0) == 1) {
    auto hw = bytes.squeeze(0).contiguous();
    mat = cv::Mat(static_cast<int>(hw.size(0)), static_cast<int>(hw.size(1)), CV_8UC1,
                  hw.data_ptr<uint8_t>())
              .clone();
  } else {
    auto hwc = bytes.flip({0}).permute({1, 2, 0}).contiguous();  // RGB -> BGR
    mat = cv::Mat(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3,
                  hwc.data_ptr<uint8_t>())
              .clone();
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw Error(ErrorKind::WriteError, path.string() + ": " + e.what());
  }
  if (!ok) throw Error(ErrorKind::WriteError, path.string());
}

void save_image(const ColorImage& image, const std::filesystem::path& path) {
  save_image(image.data(), path);
}

void save_image(const SketchImage& image, const std::filesystem::path& path) {
  save_image(image.data(), path);
}

}  // namespace refsketch
