#pragma once

// Adversarial training of the sketch generator with a color-reconstruction
// cycle, plus checkpointing and single-image extraction.

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "refsketch/extractors.hpp"
#include "refsketch/imaging.hpp"
#include "refsketch/losses.hpp"
#include "refsketch/networks.hpp"

namespace refsketch {

inline constexpr int kCheckpointFormatVersion = 1;

struct AblationFlags {
  bool no_attention = false;
  bool no_style = false;
  bool no_line = false;
  bool no_cyc = false;
};

struct TrainConfig {
  int epochs = 100;
  int batch = 4;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int64_t resolution = kDefaultResolution;
  int64_t width = kDefaultWidth;
  int64_t disc_width = kDefaultWidth;
  uint64_t seed = 0;
  AblationFlags ablation;
  bool saturating = false;
  /// Global gradient-norm clip per optimizer step; 0 disables clipping.
  double clip_norm = 0.0;
  /// Edge detector and perceptual extractor kinds (see make_extractor).
  std::string edge_extractor = "hed";
  std::string perceptual_extractor = "vgg16";
  std::filesystem::path hed_weights;
  std::filesystem::path vgg_weights;
  std::filesystem::path style_encoder;
  std::filesystem::path out_dir = "runs/train";

  /// Throws InvalidConfig when an invariant fails.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Constant for the first half, then linear decay to zero at `total`.
double lr_schedule(int epoch, int total = 100, double base = 2e-4);

/// Fixed networks the generator losses depend on. A member may be null when
/// the matching ablation flag disables its loss.
struct FrozenNetworks {
  StyleEncoder style{nullptr};
  ExtractorPtr edges;
  ExtractorPtr perceptual;
};

/// Resolves the configured extractors and style encoder. Without weight
/// files the edge detector falls back to Sobel and the perceptual taps to
/// identity, with a warning.
FrozenNetworks make_frozen_networks(const TrainConfig& config);

struct StepOptions {
  /// Verify that the discriminator step leaves the generators untouched and
  /// the generator step leaves the discriminator untouched.
  bool audit = false;
};

class Trainer {
 public:
  Trainer(TrainConfig config, FrozenNetworks frozen);

  /// colors: N×3×R×R, references: N×1×R×R. Runs one discriminator update on
  /// (references, detached outputs), then one generator update on the
  /// weighted objective. Throws NonFiniteLoss before stepping on NaN/inf.
  LossBreakdown train_step(const torch::Tensor& colors, const torch::Tensor& references,
                           const LossWeights& weights, const StepOptions& options = {});

  void set_learning_rate(double lr);
  double learning_rate() const;

  /// `epoch` is the number of completed epochs.
  void save_checkpoint(const std::filesystem::path& path, int epoch) const;
  /// Restores models, optimizer moments and RNG state; returns completed epochs.
  int load_checkpoint(const std::filesystem::path& path);

  SketchGenerator& sketch_generator() { return gs_; }
  ColorGenerator& color_generator() { return gc_; }
  PatchDiscriminator& discriminator() { return d_; }
  const TrainConfig& config() const noexcept { return config_; }
  const FrozenNetworks& frozen() const noexcept { return frozen_; }

 private:
  TrainConfig config_;
  FrozenNetworks frozen_;
  SketchGenerator gs_{nullptr};
  ColorGenerator gc_{nullptr};
  PatchDiscriminator d_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
};

GeneratorOptions generator_options(const TrainConfig& config);
DiscriminatorOptions discriminator_options(const TrainConfig& config);

struct TrainData {
  std::filesystem::path color_dir;
  std::filesystem::path sketch_dir;
};

struct StepRecord {
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  LossWeights weights;
  LossBreakdown losses;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  int epochs_completed = 0;
};

/// Per epoch: weights = loss_weights(epoch, epochs), lr = lr_schedule(epoch,
/// epochs, lr); one checkpoint epoch_<k>.ckpt after each epoch k (1-based)
/// and one CSV row per step in losses.csv. `resume` continues from a
/// checkpoint's completed-epoch count.
TrainResult train(const TrainConfig& config, const TrainData& data, FrozenNetworks frozen,
                  const std::optional<std::filesystem::path>& resume = std::nullopt,
                  const std::function<void(const StepRecord&)>& on_step = {});

/// Loads colors as N×3×R×R and references as N×1×R×R.
std::pair<torch::Tensor, torch::Tensor> load_training_batch(
    const std::vector<std::filesystem::path>& colors,
    const std::vector<std::filesystem::path>& references, int64_t resolution);

struct LoadedModel {
  TrainConfig config;
  SketchGenerator generator{nullptr};
  int epoch = 0;
};

/// Reads the generator from a checkpoint in eval mode.
LoadedModel load_sketch_model(const std::filesystem::path& checkpoint);

/// Model-resolution sketch for one (content, reference) pair. Content that
/// is already single-channel skips the luminance conversion.
SketchImage extract_sketch(SketchGenerator& generator, const torch::Tensor& content,
                           const SketchImage& reference);

/// resize -> gray -> generator -> save. Returns the written sketch.
SketchImage extract(const std::filesystem::path& checkpoint, const std::filesystem::path& content,
                    const std::filesystem::path& reference, const std::filesystem::path& out);

}  // namespace refsketch
