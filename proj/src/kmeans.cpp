#include "refsketch/kmeans.hpp"

#include <limits>
#include <random>

#include "refsketch/errors.hpp"

namespace refsketch {

namespace {

void check_input(const std::vector<FeatureVector>& points, int k) {
  if (points.empty()) throw Error(ErrorKind::EmptyInput, "kmeans needs at least one point");
  if (k < 1 || static_cast<size_t>(k) > points.size()) {
    throw Error(ErrorKind::OutOfRange, "kmeans needs 1 <= K <= N (K=" + std::to_string(k) +
                                           ", N=" + std::to_string(points.size()) + ")");
  }
  const size_t dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw Error(ErrorKind::ShapeMismatch, "kmeans points differ in dimension");
  }
}

int nearest(const FeatureVector& p, const std::vector<FeatureVector>& centroids, double* dist) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

std::vector<FeatureVector> seed_plus_plus(const std::vector<FeatureVector>& points, int k,
                                          std::mt19937_64& rng) {
  std::vector<FeatureVector> centroids;
  std::uniform_int_distribution<size_t> first(0, points.size() - 1);
  centroids.push_back(points[first(rng)]);
  std::vector<double> d2(points.size(), std::numeric_limits<double>::infinity());
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], squared_distance(points[i], centroids.back()));
      total += d2[i];
    }
    size_t chosen = 0;
    if (total <= 0.0) {
      // Every point coincides with a centroid; any pick is as good.
      chosen = first(rng);
    } else {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      chosen = points.size() - 1;
      for (size_t i = 0; i < points.size(); ++i) {
        target -= d2[i];
        if (target <= 0.0 && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    }
    centroids.push_back(points[chosen]);
  }
  return centroids;
}

double recompute(const std::vector<FeatureVector>& points, const std::vector<int>& labels,
                 std::vector<FeatureVector>& centroids) {
  const size_t dim = points.front().size();
  std::vector<FeatureVector> sums(centroids.size(), FeatureVector(dim, 0.0));
  std::vector<size_t> counts(centroids.size(), 0);
  for (size_t i = 0; i < points.size(); ++i) {
    auto& s = sums[labels[i]];
    for (size_t d = 0; d < dim; ++d) s[d] += points[i][d];
    ++counts[labels[i]];
  }
  for (size_t c = 0; c < centroids.size(); ++c) {
    if (counts[c] == 0) continue;
    for (size_t d = 0; d < dim; ++d) centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
  }
  double inertia = 0.0;
  for (size_t i = 0; i < points.size(); ++i) {
    inertia += squared_distance(points[i], centroids[labels[i]]);
  }
  return inertia;
}

}  // namespace

double squared_distance(const FeatureVector& a, const FeatureVector& b) {
  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

namespace {

// Lloyd iterations from the given initial centroids.
ClusterAssignment lloyd(const std::vector<FeatureVector>& points, std::vector<FeatureVector> init,
                        int max_iter) {
  const int k = static_cast<int>(init.size());
  ClusterAssignment out;
  out.centroids = std::move(init);
  out.labels.assign(points.size(), -1);

  for (int iter = 0; iter < std::max(max_iter, 1); ++iter) {
    bool changed = false;
    std::vector<double> dist(points.size());
    std::vector<size_t> counts(k, 0);
    for (size_t i = 0; i < points.size(); ++i) {
      const int label = nearest(points[i], out.centroids, &dist[i]);
      if (label != out.labels[i]) {
        out.labels[i] = label;
        changed = true;
      }
      ++counts[label];
    }
    // Re-seed empty clusters at the farthest point, taking it from a cluster
    // that keeps at least one member.
    for (int c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      size_t far = points.size();
      double far_d = -1.0;
      for (size_t i = 0; i < points.size(); ++i) {
        if (counts[out.labels[i]] > 1 && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      if (far == points.size()) break;
      --counts[out.labels[far]];
      out.labels[far] = c;
      out.centroids[c] = points[far];
      dist[far] = 0.0;
      counts[c] = 1;
      changed = true;
    }
    if (!changed && iter > 0) break;
    out.inertia = recompute(points, out.labels, out.centroids);
    out.inertia_history.push_back(out.inertia);
    out.iterations = iter + 1;
  }
  return out;
}

// Number of k-subsets of n items, saturating at `cap + 1`.
size_t subsets(size_t n, size_t k, size_t cap) {
  size_t c = 1;
  for (size_t i = 1; i <= k; ++i) {
    c = c * (n - k + i) / i;
    if (c > cap) return cap + 1;
  }
  return c;
}

}  // namespace

ClusterAssignment kmeans_single(const std::vector<FeatureVector>& points, int k, int max_iter,
                                uint64_t seed) {
  check_input(points, k);
  std::mt19937_64 rng(seed);
  return lloyd(points, seed_plus_plus(points, k, rng), max_iter);
}

ClusterAssignment kmeans(const std::vector<FeatureVector>& points, const KMeansOptions& options) {
  check_input(points, options.k);
  ClusterAssignment best;
  bool have = false;
  std::mt19937_64 seeds(options.seed);
  for (int r = 0; r < std::max(options.restarts, 1); ++r) {
    auto run = kmeans_single(points, options.k, options.max_iter, r == 0 ? options.seed : seeds());
    if (!have || run.inertia < best.inertia) {
      best = std::move(run);
      have = true;
    }
  }
  // Tiny problems: Lloyd can settle in a local optimum that few seedings
  // reach, so also start from every k-subset of the points.
  const size_t n = points.size();
  const size_t k = static_cast<size_t>(options.k);
  if (subsets(n, k, kExhaustiveSeedings) <= kExhaustiveSeedings) {
    std::vector<size_t> pick(k);
    for (size_t i = 0; i < k; ++i) pick[i] = i;
    while (true) {
      std::vector<FeatureVector> init;
      for (size_t i : pick) init.push_back(points[i]);
      auto run = lloyd(points, std::move(init), options.max_iter);
      if (run.inertia < best.inertia) best = std::move(run);
      size_t pos = k;
      while (pos > 0 && pick[pos - 1] == n - k + pos - 1) --pos;
      if (pos == 0) break;
      ++pick[pos - 1];
      for (size_t i = pos; i < k; ++i) pick[i] = pick[i - 1] + 1;
    }
  }
  return best;
}

}  // namespace refsketch
