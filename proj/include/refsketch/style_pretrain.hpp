#pragma once

// Contrastive pretraining of the style encoder with a triplet objective.
// Anchor and positive share a style; the negative shares the anchor's shape
// but not its style, so the embedding has to ignore shape and keep style.

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "refsketch/networks.hpp"

namespace refsketch {

struct CorpusEntry {
  std::filesystem::path path;
  std::string shape_id;
  std::string style_id;
};

class StyleCorpus {
 public:
  StyleCorpus() = default;
  explicit StyleCorpus(std::vector<CorpusEntry> entries);

  /// CSV with header path,shape_id,style_id. Relative paths resolve against
  /// the manifest's directory.
  static StyleCorpus load_manifest(const std::filesystem::path& manifest);
  void save_manifest(const std::filesystem::path& manifest) const;

  const std::vector<CorpusEntry>& entries() const noexcept { return entries_; }
  size_t size() const noexcept { return entries_.size(); }

  /// Throws InsufficientCorpus unless there are two or more styles and every
  /// shape appears under at least two styles.
  void validate() const;

  const std::vector<size_t>& with_style(const std::string& style) const;
  /// Entries with the given shape and any style other than `style`.
  std::vector<size_t> same_shape_other_style(const std::string& shape,
                                              const std::string& style) const;

 private:
  std::vector<CorpusEntry> entries_;
  std::map<std::string, std::vector<size_t>> by_style_;
  std::map<std::string, std::vector<size_t>> by_shape_;
};

/// Indices into StyleCorpus::entries().
struct Triplet {
  size_t anchor = 0;
  size_t positive = 0;
  size_t negative = 0;
};

inline constexpr int kTripletAttempts = 64;

/// Draws a uniform anchor and completes it; anchors without a valid negative
/// are re-drawn up to `max_attempts` times before InsufficientCorpus.
Triplet sample_triplet(const StyleCorpus& corpus, std::mt19937_64& rng,
                       int max_attempts = kTripletAttempts);

/// Completes a fixed anchor. The positive differs from the anchor whenever
/// its style has another entry.
Triplet sample_triplet_for_anchor(const StyleCorpus& corpus, size_t anchor, std::mt19937_64& rng);

inline constexpr double kTripletMargin = 1.0;

/// max(|a - p|^2 - |a - n|^2 + margin, 0) with squared Euclidean distances.
double triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const double> negative, double margin = kTripletMargin);

/// Batched form over N×D embeddings, averaged over the batch.
torch::Tensor triplet_loss(const torch::Tensor& anchor, const torch::Tensor& positive,
                           const torch::Tensor& negative, double margin = kTripletMargin);

struct TripletEmbeddings {
  torch::Tensor anchor;
  torch::Tensor positive;
  torch::Tensor negative;
};

/// One forward pass of the shared encoder over the stacked A/P/N batch.
TripletEmbeddings embed_triplets(StyleEncoder& encoder, const torch::Tensor& anchor,
                                 const torch::Tensor& positive, const torch::Tensor& negative);

struct PretrainConfig {
  int epochs = 200;
  int batch = 4;
  double lr = 2e-4;
  double margin = kTripletMargin;
  int64_t resolution = 256;
  int64_t width = kDefaultWidth;
  uint64_t seed = 0;
  /// Written after training (and on divergence as "<out>.diverged").
  std::filesystem::path out;
  /// Optional per-epoch CSV (epoch,lr,mean_triplet_loss).
  std::filesystem::path log;
};

/// Constant for the first half of training, then linear decay to zero.
double pretrain_lr(int epoch, int total_epochs, double base = 2e-4);

struct PretrainResult {
  StyleEncoder encoder{nullptr};
  std::vector<double> epoch_losses;
};

/// Each epoch visits every entry once as an anchor in a seeded random order.
/// A non-finite loss saves the last finite weights and throws
/// DivergenceDetected.
PretrainResult pretrain_style_encoder(const StyleCorpus& corpus, const PretrainConfig& config,
                                      const std::function<void(int, double)>& on_epoch = {});

void save_style_encoder(StyleEncoder& encoder, const std::filesystem::path& path);
/// Loads and freezes.
StyleEncoder load_style_encoder(const std::filesystem::path& path);

/// Loads a sketch file as a 1×1×R×R batch at the given resolution.
torch::Tensor load_sketch_batch(const std::filesystem::path& path, int64_t resolution);

struct EmbeddingRow {
  std::string path;
  std::string style;
  std::vector<float> values;
};

/// One row per sketch: path, style label (may be empty), 128 floats printed
/// with 9 significant digits.
std::vector<EmbeddingRow> compute_embeddings(StyleEncoder& encoder,
                                             const std::vector<CorpusEntry>& sketches,
                                             int64_t resolution);
void write_embeddings_csv(const std::vector<EmbeddingRow>& rows, const std::filesystem::path& out);
std::vector<EmbeddingRow> read_embeddings_csv(const std::filesystem::path& path);

}  // namespace refsketch
