#include "refsketch/synthetic.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <random>

#include "refsketch/errors.hpp"
#include "refsketch/imaging.hpp"

namespace refsketch {

namespace {

struct StrokeStyle {
  float value;
  int thickness;
  int dash_period;  // 0 = continuous
};

StrokeStyle stroke_style(int style_id) {
  switch (style_id) {
    case 1: return {-1.0f, 1, 0};
    case 2: return {-0.2f, 1, 0};
    case 3: return {-1.0f, 3, 0};
    case 4: return {-0.6f, 2, 6};
    default: break;
  }
  throw Error(ErrorKind::OutOfRange, "synthetic style must be 1..4");
}

}  // namespace

torch::Tensor render_synthetic_sketch(int shape_id, int style_id, int64_t size,
                                      uint64_t variant) {
  const auto style = stroke_style(style_id);
  const int n = static_cast<int>(size);
  cv::Mat mask = cv::Mat::zeros(n, n, CV_8UC1);

  std::mt19937_64 shape_rng(0x5eed0000ULL + static_cast<uint64_t>(shape_id));
  std::mt19937_64 jitter_rng(0x71773e00ULL ^ (variant * 0x9e3779b97f4a7c15ULL) ^
                             static_cast<uint64_t>(shape_id));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-1.0 / 32.0, 1.0 / 32.0);
  auto coord = [&](double lo, double hi) {
    double v = lo + (hi - lo) * unit(shape_rng);
    if (variant != 0) v += jitter(jitter_rng);
    return static_cast<int>(std::lround(std::clamp(v, 0.05, 0.95) * (n - 1)));
  };

  const int primitives = 3 + static_cast<int>(shape_rng() % 3);
  for (int i = 0; i < primitives; ++i) {
    const int kind = static_cast<int>(shape_rng() % 3);
    if (kind == 0) {
      cv::Point center(coord(0.3, 0.7), coord(0.3, 0.7));
      const int radius = std::max(2, static_cast<int>((0.1 + 0.2 * unit(shape_rng)) * n));
      cv::circle(mask, center, radius, 255, style.thickness, cv::LINE_AA);
    } else if (kind == 1) {
      cv::line(mask, {coord(0.1, 0.9), coord(0.1, 0.9)}, {coord(0.1, 0.9), coord(0.1, 0.9)}, 255,
               style.thickness, cv::LINE_AA);
    } else {
      cv::Point a(coord(0.1, 0.5), coord(0.1, 0.5));
      cv::Point b(coord(0.5, 0.9), coord(0.5, 0.9));
      cv::rectangle(mask, a, b, 255, style.thickness, cv::LINE_AA);
    }
  }
  if (style.dash_period > 0) {
    for (int y = 0; y < n; ++y) {
      auto* row = mask.ptr<uint8_t>(y);
      for (int x = 0; x < n; ++x) {
        if (((x + y) / style.dash_period) % 2 == 1) row[x] = 0;
      }
    }
  }

  auto coverage = torch::from_blob(mask.data, {1, n, n}, torch::kUInt8).to(torch::kFloat32) / 255.0f;
  return (1.0f - (1.0f - style.value) * coverage).clamp(-1.0, 1.0);
}

torch::Tensor render_color_block(int index, int64_t size) {
  std::mt19937_64 rng(0xc010ULL + static_cast<uint64_t>(index));
  std::uniform_real_distribution<float> channel(-1.0f, 0.6f);
  auto img = torch::ones({3, size, size});
  const int64_t margin = size / 8;
  for (int c = 0; c < 3; ++c) {
    img[c].narrow(0, margin, size - 2 * margin).narrow(1, margin, size - 2 * margin).fill_(channel(rng));
  }
  return img;
}

StyleCorpus write_synthetic_corpus(const std::filesystem::path& dir, int shapes, int64_t size,
                                   uint64_t seed, int variants) {
  if (shapes < 1 || variants < 1) throw Error(ErrorKind::InvalidConfig, "need shapes, variants >= 1");
  std::filesystem::create_directories(dir);
  std::vector<CorpusEntry> entries;
  for (int shape = 0; shape < shapes; ++shape) {
    for (int style = 1; style <= kSyntheticStyles; ++style) {
      for (int v = 0; v < variants; ++v) {
        const auto name = "s" + std::to_string(shape) + "_t" + std::to_string(style) + "_v" +
                          std::to_string(v) + ".png";
        const auto path = dir / name;
        const uint64_t variant = v == 0 ? 0 : seed * 1000003ULL + static_cast<uint64_t>(v);
        save_image(render_synthetic_sketch(static_cast<int>(seed) * 100000 + shape, style, size,
                                           variant),
                   path);
        entries.push_back({path, std::to_string(shape), std::to_string(style)});
      }
    }
  }
  StyleCorpus corpus(std::move(entries));
  corpus.save_manifest(dir / "manifest.csv");
  return corpus;
}

}  // namespace refsketch
