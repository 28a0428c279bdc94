#pragma once

// Shared fixtures: scratch directories, procedural images, finite-difference
// gradient checks and a brute-force K-means optimum.

#include <torch/torch.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "refsketch/errors.hpp"
#include "refsketch/imaging.hpp"
#include "refsketch/kmeans.hpp"

namespace testing {

/// Kind of the refsketch::Error thrown by `f`, or nullopt if none is thrown.
inline std::optional<refsketch::ErrorKind> error_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const refsketch::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("refsketch_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Smooth color pattern, distinct per index, 3×size×size in [-1, 1].
inline torch::Tensor color_pattern(int index, int64_t size) {
  auto y = torch::linspace(-1.0, 1.0, size).view({size, 1}).expand({size, size});
  auto x = torch::linspace(-1.0, 1.0, size).view({1, size}).expand({size, size});
  const double f = 1.0 + index;
  auto r = torch::sin(f * 2.0 * x + 0.3 * index);
  auto g = torch::cos(f * 1.5 * y - 0.7 * index);
  auto b = torch::tanh(f * (x * y) + 0.2 * index);
  return torch::stack({r, g, b}).to(torch::kFloat32).clamp(-1.0, 1.0).contiguous();
}

struct GradCheck {
  double max_relative_error = 0.0;
  int coordinates = 0;
};

/// Compares d f / d input from autograd with central differences on sampled
/// coordinates. `f` must return a scalar; inputs should be float64.
inline GradCheck grad_check(const std::function<torch::Tensor(const torch::Tensor&)>& f,
                            const torch::Tensor& input, int samples = 24, double step = 1e-4,
                            uint64_t seed = 7) {
  auto x = input.detach().clone().set_requires_grad(true);
  auto y = f(x);
  auto analytic = torch::autograd::grad({y}, {x})[0].contiguous();
  auto flat = x.detach().clone().contiguous();
  auto* data = flat.data_ptr<double>();
  const auto* grad = analytic.data_ptr<double>();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int64_t> pick(0, flat.numel() - 1);
  GradCheck out;
  torch::NoGradGuard guard;
  for (int s = 0; s < samples; ++s) {
    const auto i = samples >= flat.numel() ? s % flat.numel() : pick(rng);
    const double saved = data[i];
    data[i] = saved + step;
    const double up = f(flat).item<double>();
    data[i] = saved - step;
    const double down = f(flat).item<double>();
    data[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(grad[i]), std::abs(numeric), 1e-6});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(grad[i] - numeric) / denom);
    ++out.coordinates;
  }
  return out;
}

/// Lowest inertia over every labelling of `points` with at most k labels.
inline double brute_force_inertia(const std::vector<refsketch::FeatureVector>& points, int k) {
  const size_t n = points.size();
  const size_t dim = points.front().size();
  std::vector<int> labels(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    double inertia = 0.0;
    for (int c = 0; c < k; ++c) {
      std::vector<double> mean(dim, 0.0);
      int count = 0;
      for (size_t i = 0; i < n; ++i) {
        if (labels[i] != c) continue;
        for (size_t d = 0; d < dim; ++d) mean[d] += points[i][d];
        ++count;
      }
      if (count == 0) continue;
      for (auto& m : mean) m /= count;
      for (size_t i = 0; i < n; ++i) {
        if (labels[i] == c) inertia += refsketch::squared_distance(points[i], mean);
      }
    }
    best = std::min(best, inertia);
    size_t pos = 0;
    while (pos < n && ++labels[pos] == k) labels[pos++] = 0;
    if (pos == n) break;
  }
  return best;
}

/// Best agreement between predicted and true labels over all relabellings.
inline double permutation_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth,
                                   int k) {
  std::vector<int> perm(k);
  for (int i = 0; i < k; ++i) perm[i] = i;
  double best = 0.0;
  do {
    int hits = 0;
    for (size_t i = 0; i < predicted.size(); ++i) hits += perm[predicted[i]] == truth[i];
    best = std::max(best, static_cast<double>(hits) / static_cast<double>(predicted.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace testing
