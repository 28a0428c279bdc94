#pragma once

// Image-similarity metrics and the two benchmark protocols over the paired
// four-style evaluation set.

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "refsketch/curation.hpp"
#include "refsketch/extractors.hpp"
#include "refsketch/imaging.hpp"

namespace refsketch {

/// Reported for exact matches instead of +inf.
inline constexpr double kPsnrCap = 100.0;
inline constexpr int64_t kEvalResolution = 512;

/// Images in [-1, 1] are mapped linearly onto [0, 255] before the MSE.
double psnr(const torch::Tensor& a, const torch::Tensor& b);
/// Inputs already on the 0..255 scale.
double psnr_bytes(const torch::Tensor& a, const torch::Tensor& b);

/// Learned-perceptual distance: per tap, unit-normalize features over
/// channels, square the difference, weight channels, average over space,
/// and sum over taps.
class LpipsMetric {
 public:
  /// Unit channel weights.
  explicit LpipsMetric(ExtractorPtr backbone);
  /// One 1-D weight vector per tap.
  LpipsMetric(ExtractorPtr backbone, std::vector<torch::Tensor> channel_weights);
  /// Backbone plus calibrated weights stored as "lin<k>" in a TensorArchive.
  static LpipsMetric from_archive(ExtractorPtr backbone, const std::filesystem::path& weights);

  /// a, b: N×C×H×W (or C×H×W). Returns one distance per image.
  torch::Tensor distances(const torch::Tensor& a, const torch::Tensor& b) const;
  /// Mean distance.
  double operator()(const torch::Tensor& a, const torch::Tensor& b) const;

  const FeatureExtractor& backbone() const { return *backbone_; }

 private:
  ExtractorPtr backbone_;
  std::vector<torch::Tensor> weights_;
};

/// Frechet distance between Gaussian fits of two feature sets (rows are
/// samples), computed in double precision. Throws DegenerateCovariance when
/// a set has fewer than two rows.
double fid(const torch::Tensor& features_a, const torch::Tensor& features_b);

struct MetricBlock {
  double psnr = 0.0;
  double lpips = 0.0;
  double fid = 0.0;
  int n = 0;
};

struct MetricSection {
  std::string name;
  std::array<MetricBlock, kEvalStyles> per_style;
  MetricBlock aggregate;
};

struct MetricReport {
  std::string protocol;
  std::string against;
  int64_t resolution = kEvalResolution;
  int n = 0;
  std::vector<MetricSection> sections;

  const MetricSection& section(const std::string& name) const;
  nlohmann::json to_json() const;
  void write_json(const std::filesystem::path& path) const;
  /// section,style,psnr,lpips,fid,n rows; style "all" is the aggregate.
  void write_csv(const std::filesystem::path& path) const;
};

/// Content (3×R×R color or 1×R×R sketch) and reference sketch to output sketch.
using SketchModel = std::function<SketchImage(const torch::Tensor& content, const SketchImage& reference)>;

/// Wraps a checkpointed generator; outputs are resized to `resolution`.
SketchModel checkpoint_model(const std::filesystem::path& checkpoint,
                             int64_t resolution = kEvalResolution);

struct EvalBackbones {
  ExtractorPtr fid;
  LpipsMetric lpips;
};

/// FID on `fid_kind` features and LPIPS on `lpips_kind` taps. Weighted kinds
/// need weight files; without them the analytic grid-pool and patch
/// extractors stand in.
EvalBackbones make_backbones(const std::string& fid_kind = "grid-pool",
                             const std::filesystem::path& fid_weights = {},
                             const std::string& lpips_kind = "patches",
                             const std::filesystem::path& lpips_weights = {});

/// Shape whose style-s sketch serves as reference for shape i.
inline int reference_shape(int shape) { return (shape + 1) % kEvalShapes; }

/// For every (shape i, style s): output = model(color_i, sketch[(i+1) mod 25][s]),
/// compared with sketch[i][s]. FID pools all outputs against all ground truths.
MetricReport evaluate_extraction(const std::vector<EvalPair>& dataset, const SketchModel& model,
                                 const EvalBackbones& backbones);
MetricReport evaluate_extraction(const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& dataset_root,
                                 const EvalBackbones& backbones);

enum class CyclicTarget { FirstOutput, GroundTruth };
CyclicTarget parse_cyclic_target(const std::string& text);
std::string to_string(CyclicTarget target);

/// O1 = model(C, R) with the extraction-protocol reference, O2 = model(C, O1).
/// Section "first_pass" compares O1 with ground truth; section "cyclic"
/// compares O2 with O1 or with ground truth.
MetricReport cyclic_evaluate(const std::vector<EvalPair>& dataset, const SketchModel& model,
                             const EvalBackbones& backbones,
                             CyclicTarget against = CyclicTarget::FirstOutput);
MetricReport cyclic_evaluate(const std::filesystem::path& checkpoint,
                             const std::filesystem::path& dataset_root,
                             const EvalBackbones& backbones,
                             CyclicTarget against = CyclicTarget::FirstOutput);

}  // namespace refsketch
