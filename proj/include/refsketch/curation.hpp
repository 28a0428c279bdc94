#pragma once

// Corpus construction: clustering-based culling with human review between
// rounds, style discovery, unpaired training batches, and the paired
// four-style evaluation set loader.

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "refsketch/extractors.hpp"
#include "refsketch/imaging.hpp"
#include "refsketch/kmeans.hpp"

namespace refsketch {

/// Default backbone input size; VGG16's last conv grid is 7×7×512 at 224.
inline constexpr int64_t kClusterInputSize = 224;

/// One vector per image. Images are C×H×W in [-1, 1]; each is resized to
/// input_size×input_size and replicated to three channels when the backbone
/// wants three.
std::vector<FeatureVector> extract_cluster_features(const std::vector<torch::Tensor>& images,
                                                    const FeatureExtractor& backbone,
                                                    int64_t input_size = kClusterInputSize);

/// Loads each path as a color raster and extracts its features.
std::vector<FeatureVector> extract_cluster_features(const std::vector<std::filesystem::path>& paths,
                                                    const FeatureExtractor& backbone,
                                                    int64_t input_size = kClusterInputSize);

struct CullOptions {
  int k = 10;
  int rounds = 3;
  int max_iter = 300;
  uint64_t seed = 0;
};

/// Review callback: given the round (0-based), the clustering of the items
/// still alive, and their indices into the original list, returns the
/// cluster labels to keep.
using KeepReviewer = std::function<std::set<int>(int round, const ClusterAssignment& clusters,
                                                 const std::vector<size_t>& alive)>;

struct CullResult {
  std::vector<size_t> kept;                 // indices into the input, ascending
  std::vector<ClusterAssignment> rounds;    // clustering shown at each round
  std::vector<std::vector<size_t>> members; // alive indices at each round
};

/// Clusters the surviving items each round and keeps only the reviewed
/// labels. K shrinks to the number of survivors when fewer remain. Throws
/// AllCulled rather than return an empty corpus.
CullResult cull_improper(const std::vector<FeatureVector>& features, const CullOptions& options,
                         const KeepReviewer& reviewer);

/// K-means over a culled sketch corpus (K = 4 by default).
ClusterAssignment identify_styles(const std::vector<FeatureVector>& features, int k = 4,
                                  uint64_t seed = 0, int max_iter = 300);

/// Writes one PNG grid of thumbnails per cluster: <prefix>_cluster<k>.png.
std::vector<std::filesystem::path> write_contact_sheets(
    const std::vector<std::filesystem::path>& images, const std::vector<int>& labels,
    const std::filesystem::path& dir, const std::string& prefix, int64_t thumb = 64,
    int64_t columns = 8, int64_t max_per_sheet = 64);

/// path,label rows.
void write_cluster_manifest(const std::vector<std::filesystem::path>& images,
                            const std::vector<int>& labels, const std::filesystem::path& out);

/// Sorted .png/.jpg/.jpeg files of a directory; EmptyDirectory when none.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

struct PairBatch {
  std::vector<std::filesystem::path> colors;
  std::vector<std::filesystem::path> references;
};

/// Unpaired (color, reference) batches. Each epoch is a seeded permutation of
/// the color set; every reference is drawn uniformly and independently from
/// the sketch set. Epochs are pure functions of (seed, epoch).
class UnpairedBatches {
 public:
  UnpairedBatches(std::vector<std::filesystem::path> colors,
                  std::vector<std::filesystem::path> sketches, int batch = 4, uint64_t seed = 0);
  UnpairedBatches(const std::filesystem::path& color_dir, const std::filesystem::path& sketch_dir,
                  int batch = 4, uint64_t seed = 0);

  std::vector<PairBatch> epoch(int index) const;
  size_t batches_per_epoch() const;
  int batch_size() const noexcept { return batch_; }

 private:
  std::vector<std::filesystem::path> colors_;
  std::vector<std::filesystem::path> sketches_;
  int batch_;
  uint64_t seed_;
};

inline constexpr int kEvalShapes = 25;
inline constexpr int kEvalStyles = 4;

struct EvalPairPaths {
  int shape = 0;
  std::filesystem::path color;
  std::array<std::filesystem::path, kEvalStyles> sketches;  // style 1..4 at [0..3]
};

/// Validates root/color/NN.png and root/style{1..4}/NN.png for NN in 00..24.
/// IncompleteDataset lists every missing file.
std::vector<EvalPairPaths> index_4skst(const std::filesystem::path& root);

struct EvalPair {
  int shape = 0;
  ColorImage color;
  std::array<SketchImage, kEvalStyles> sketches;
};

/// Loads and resizes every pair to resolution×resolution.
std::vector<EvalPair> load_4skst(const std::filesystem::path& root, int64_t resolution = 512);

}  // namespace refsketch
