#pragma once

// Lloyd's K-means with K-means++ seeding.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace refsketch {

using FeatureVector = std::vector<double>;

struct ClusterAssignment {
  std::vector<int> labels;               // per item, in [0, K)
  std::vector<FeatureVector> centroids;  // K centroids, each the mean of its members
  double inertia = 0.0;                  // sum of squared distances to own centroid
  std::vector<double> inertia_history;   // after each Lloyd iteration
  int iterations = 0;
};

struct KMeansOptions {
  int k = 4;
  int max_iter = 300;
  uint64_t seed = 0;
  /// Independent seedings; the lowest-inertia run is returned.
  int restarts = 10;
};

double squared_distance(const FeatureVector& a, const FeatureVector& b);

/// One seeded run: K-means++ initialization, then Lloyd iterations until the
/// assignment is a fixpoint or max_iter is reached. A cluster that empties is
/// re-seeded at the point farthest from its current centroid.
ClusterAssignment kmeans_single(const std::vector<FeatureVector>& points, int k, int max_iter,
                                uint64_t seed);

/// Problems with at most this many k-subsets of points also run Lloyd from
/// every subset as the initial centroids.
inline constexpr size_t kExhaustiveSeedings = 256;

/// Best of `restarts` single runs, plus the exhaustive seedings above when
/// they apply. Throws EmptyInput on no points and OutOfRange unless 1 <= k <= N.
ClusterAssignment kmeans(const std::vector<FeatureVector>& points, const KMeansOptions& options);

}  // namespace refsketch
