#include "refsketch/evaluation.hpp"

#include <cmath>
#include <fstream>

#include "refsketch/archive.hpp"
#include "refsketch/errors.hpp"
#include "refsketch/logging.hpp"
#include "refsketch/training.hpp"

namespace refsketch {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    std::ostringstream msg;
    msg << what << ": " << a.sizes() << " vs " << b.sizes();
    throw Error(ErrorKind::ShapeMismatch, msg.str());
  }
}

torch::Tensor as_batch(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

// Unit vectors along the channel axis; the epsilon keeps all-zero features finite.
torch::Tensor unit_channels(const torch::Tensor& f) {
  return f / (f.pow(2).sum(1, true).sqrt() + 1e-10);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

ExtractorPtr backbone_or_fallback(const std::string& kind, const std::filesystem::path& weights,
                                  const std::string& fallback, const char* role) {
  const bool needs_weights = kind == "vgg16" || kind == "hed";
  if (needs_weights && weights.empty()) {
    log::warn(role, " backbone '", kind, "' has no weights; using analytic '", fallback, "'");
    return make_extractor(fallback);
  }
  return make_extractor(kind, weights);
}

struct PairOutcome {
  int style = 0;
  double psnr = 0.0;
  double lpips = 0.0;
};

MetricSection summarize(const std::string& name, const std::vector<PairOutcome>& outcomes,
                        const std::vector<torch::Tensor>& produced,
                        const std::vector<torch::Tensor>& targets, const EvalBackbones& backbones) {
  MetricSection section;
  section.name = name;
  auto features = [&](const std::vector<torch::Tensor>& images) {
    return extract_vectors(*backbones.fid, torch::stack(images));
  };
  std::vector<double> all_psnr, all_lpips;
  for (int s = 0; s < kEvalStyles; ++s) {
    std::vector<double> p, l;
    std::vector<torch::Tensor> out_s, gt_s;
    for (size_t i = 0; i < outcomes.size(); ++i) {
      if (outcomes[i].style != s) continue;
      p.push_back(outcomes[i].psnr);
      l.push_back(outcomes[i].lpips);
      out_s.push_back(produced[i]);
      gt_s.push_back(targets[i]);
    }
    auto& block = section.per_style[s];
    block.n = static_cast<int>(p.size());
    block.psnr = mean_of(p);
    block.lpips = mean_of(l);
    block.fid = out_s.size() >= 2 ? fid(features(out_s), features(gt_s)) : 0.0;
    all_psnr.insert(all_psnr.end(), p.begin(), p.end());
    all_lpips.insert(all_lpips.end(), l.begin(), l.end());
  }
  section.aggregate.n = static_cast<int>(all_psnr.size());
  section.aggregate.psnr = mean_of(all_psnr);
  section.aggregate.lpips = mean_of(all_lpips);
  section.aggregate.fid = fid(features(produced), features(targets));
  return section;
}

void require_eval_set(const std::vector<EvalPair>& dataset) {
  if (dataset.size() != static_cast<size_t>(kEvalShapes)) {
    throw Error(ErrorKind::IncompleteDataset, "evaluation set has " +
                                                  std::to_string(dataset.size()) + " shapes, expected " +
                                                  std::to_string(kEvalShapes));
  }
}

struct Scored {
  std::vector<PairOutcome> outcomes;
  std::vector<torch::Tensor> produced;
  std::vector<torch::Tensor> targets;

  void add(int style, const torch::Tensor& out, const torch::Tensor& target,
           const LpipsMetric& lpips) {
    outcomes.push_back({style, psnr(out, target), lpips(out, target)});
    produced.push_back(out);
    targets.push_back(target);
  }
};

torch::Tensor checked_output(const SketchImage& out, const torch::Tensor& target) {
  require_same_shape(out.data(), target, "model output vs ground truth");
  return out.data();
}

}  // namespace

double psnr_bytes(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "psnr");
  const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "psnr");
  auto to_bytes = [](const torch::Tensor& t) { return (t.to(torch::kFloat64) + 1.0) * 127.5; };
  return psnr_bytes(to_bytes(a), to_bytes(b));
}

LpipsMetric::LpipsMetric(ExtractorPtr backbone) : LpipsMetric(std::move(backbone), {}) {}

LpipsMetric::LpipsMetric(ExtractorPtr backbone, std::vector<torch::Tensor> channel_weights)
    : backbone_(std::move(backbone)), weights_(std::move(channel_weights)) {
  if (!backbone_) throw Error(ErrorKind::ExtractorUnavailable, "LPIPS needs a backbone");
  if (!weights_.empty() && weights_.size() != backbone_->taps().size()) {
    throw Error(ErrorKind::ExtractorShapeMismatch,
                "LPIPS weights for " + std::to_string(weights_.size()) + " taps, backbone has " +
                    std::to_string(backbone_->taps().size()));
  }
}

LpipsMetric LpipsMetric::from_archive(ExtractorPtr backbone, const std::filesystem::path& weights) {
  if (!backbone) throw Error(ErrorKind::ExtractorUnavailable, "LPIPS needs a backbone");
  auto archive = TensorArchive::load(weights);
  std::vector<torch::Tensor> lin;
  for (size_t k = 0; k < backbone->taps().size(); ++k) {
    const auto name = "lin" + std::to_string(k);
    if (!archive.contains(name)) {
      throw Error(ErrorKind::ExtractorUnavailable, weights.string() + " lacks " + name);
    }
    lin.push_back(archive.get(name).reshape({-1}).to(torch::kFloat32));
  }
  return LpipsMetric(std::move(backbone), std::move(lin));
}

torch::Tensor LpipsMetric::distances(const torch::Tensor& a, const torch::Tensor& b) const {
  require_same_shape(a, b, "lpips");
  torch::NoGradGuard guard;
  auto fa = backbone_->apply(as_batch(a));
  auto fb = backbone_->apply(as_batch(b));
  auto total = torch::zeros({as_batch(a).size(0)}, torch::kFloat64);
  for (size_t k = 0; k < fa.size(); ++k) {
    auto diff = (unit_channels(fa[k].to(torch::kFloat64)) - unit_channels(fb[k].to(torch::kFloat64))).pow(2);
    if (!weights_.empty()) {
      const auto& w = weights_[k];
      if (w.numel() != diff.size(1)) {
        throw Error(ErrorKind::ExtractorShapeMismatch, "LPIPS weight length does not match tap channels");
      }
      diff = diff * w.to(torch::kFloat64).view({1, -1, 1, 1});
    }
    total += diff.sum(1).mean({1, 2});
  }
  return total;
}

double LpipsMetric::operator()(const torch::Tensor& a, const torch::Tensor& b) const {
  return distances(a, b).mean().item<double>();
}

double fid(const torch::Tensor& features_a, const torch::Tensor& features_b) {
  auto a = features_a.to(torch::kFloat64).reshape({features_a.size(0), -1});
  auto b = features_b.to(torch::kFloat64).reshape({features_b.size(0), -1});
  if (a.size(0) < 2 || b.size(0) < 2) {
    throw Error(ErrorKind::DegenerateCovariance, "FID needs at least two samples per set");
  }
  if (a.size(1) != b.size(1)) throw Error(ErrorKind::ShapeMismatch, "FID feature dimensions differ");
  const auto dim = a.size(1);
  if (a.size(0) <= dim || b.size(0) <= dim) {
    log::warn("FID with ", a.size(0), "/", b.size(0), " samples in ", dim,
               " dimensions is biased");
  }
  auto mu_a = a.mean(0), mu_b = b.mean(0);
  auto ca = a - mu_a, cb = b - mu_b;
  auto cov_a = ca.t().mm(ca) / static_cast<double>(a.size(0) - 1);
  auto cov_b = cb.t().mm(cb) / static_cast<double>(b.size(0) - 1);

  auto clamp_eigen = [](torch::Tensor values) {
    const double lowest = values.min().item<double>();
    if (lowest < -1e-6) log::warn("FID: clamping eigenvalue ", lowest, " to zero");
    return values.clamp_min(0.0);
  };
  // Tr((Σa Σb)^½) = Tr((Σa^½ Σb Σa^½)^½), and the inner product is symmetric PSD.
  auto [va, ua] = torch::linalg_eigh(cov_a);
  auto sqrt_a = ua.mm(torch::diag(clamp_eigen(va).sqrt())).mm(ua.t());
  auto inner = sqrt_a.mm(cov_b).mm(sqrt_a);
  inner = (inner + inner.t()) / 2.0;
  auto vm = torch::linalg_eigvalsh(inner);
  const double cross = clamp_eigen(vm).sqrt().sum().item<double>();
  const double mean_term = (mu_a - mu_b).pow(2).sum().item<double>();
  const double value = mean_term + cov_a.trace().item<double>() + cov_b.trace().item<double>() - 2.0 * cross;
  return std::max(0.0, value);
}

const MetricSection& MetricReport::section(const std::string& name) const {
  for (const auto& s : sections) {
    if (s.name == name) return s;
  }
  throw Error(ErrorKind::OutOfRange, "report has no section '" + name + "'");
}

nlohmann::json MetricReport::to_json() const {
  auto block = [](const MetricBlock& b) {
    return nlohmann::json{{"psnr", b.psnr}, {"lpips", b.lpips}, {"fid", b.fid}, {"n", b.n}};
  };
  nlohmann::json out{{"protocol", protocol}, {"resolution", resolution}, {"n", n}};
  if (!against.empty()) out["against"] = against;
  for (const auto& s : sections) {
    nlohmann::json styles = nlohmann::json::object();
    for (int k = 0; k < kEvalStyles; ++k) styles["style" + std::to_string(k + 1)] = block(s.per_style[k]);
    out["sections"][s.name] = {{"aggregate", block(s.aggregate)}, {"per_style", styles}};
  }
  return out;
}

void MetricReport::write_json(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IOError, "cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

void MetricReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IOError, "cannot write " + path.string());
  out.precision(10);
  out << "section,style,psnr,lpips,fid,n\n";
  for (const auto& s : sections) {
    for (int k = 0; k < kEvalStyles; ++k) {
      const auto& b = s.per_style[k];
      out << s.name << ",style" << k + 1 << ',' << b.psnr << ',' << b.lpips << ',' << b.fid << ','
          << b.n << '\n';
    }
    const auto& b = s.aggregate;
    out << s.name << ",all," << b.psnr << ',' << b.lpips << ',' << b.fid << ',' << b.n << '\n';
  }
}

SketchModel checkpoint_model(const std::filesystem::path& checkpoint, int64_t resolution) {
  auto model = std::make_shared<LoadedModel>(load_sketch_model(checkpoint));
  return [model, resolution](const torch::Tensor& content, const SketchImage& reference) {
    auto out = extract_sketch(model->generator, content, reference);
    return refsketch::resize(out, {resolution, resolution});
  };
}

EvalBackbones make_backbones(const std::string& fid_kind, const std::filesystem::path& fid_weights,
                             const std::string& lpips_kind,
                             const std::filesystem::path& lpips_weights) {
  auto fid_net = backbone_or_fallback(fid_kind, fid_weights, "grid-pool", "FID");
  // LPIPS weights hold both the backbone trunk and the "lin<k>" channel weights.
  auto lpips_net = backbone_or_fallback(lpips_kind, lpips_weights, "patches", "LPIPS");
  if (!lpips_weights.empty()) {
    auto archive = TensorArchive::load(lpips_weights);
    if (archive.contains("lin0")) {
      return {fid_net, LpipsMetric::from_archive(lpips_net, lpips_weights)};
    }
  }
  return {fid_net, LpipsMetric(lpips_net)};
}

MetricReport evaluate_extraction(const std::vector<EvalPair>& dataset, const SketchModel& model,
                                 const EvalBackbones& backbones) {
  require_eval_set(dataset);
  Scored scored;
  for (int i = 0; i < kEvalShapes; ++i) {
    const auto& reference_pair = dataset[reference_shape(i)];
    for (int s = 0; s < kEvalStyles; ++s) {
      const auto& target = dataset[i].sketches[s].data();
      auto out = checked_output(model(dataset[i].color.data(), reference_pair.sketches[s]), target);
      scored.add(s, out, target, backbones.lpips);
    }
    log::debug("evaluated shape ", i + 1, "/", kEvalShapes);
  }
  MetricReport report;
  report.protocol = "extraction";
  report.resolution = dataset.front().color.data().size(1);
  report.n = static_cast<int>(scored.outcomes.size());
  report.sections.push_back(
      summarize("extraction", scored.outcomes, scored.produced, scored.targets, backbones));
  return report;
}

MetricReport evaluate_extraction(const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& dataset_root,
                                 const EvalBackbones& backbones) {
  auto dataset = load_4skst(dataset_root, kEvalResolution);
  return evaluate_extraction(dataset, checkpoint_model(checkpoint, kEvalResolution), backbones);
}

CyclicTarget parse_cyclic_target(const std::string& text) {
  if (text == "first-output") return CyclicTarget::FirstOutput;
  if (text == "ground-truth") return CyclicTarget::GroundTruth;
  throw Error(ErrorKind::InvalidConfig, "cyclic target must be first-output or ground-truth, got '" +
                                            text + "'");
}

std::string to_string(CyclicTarget target) {
  return target == CyclicTarget::FirstOutput ? "first-output" : "ground-truth";
}

MetricReport cyclic_evaluate(const std::vector<EvalPair>& dataset, const SketchModel& model,
                             const EvalBackbones& backbones, CyclicTarget against) {
  require_eval_set(dataset);
  Scored first, cyclic;
  for (int i = 0; i < kEvalShapes; ++i) {
    const auto& reference_pair = dataset[reference_shape(i)];
    for (int s = 0; s < kEvalStyles; ++s) {
      const auto& truth = dataset[i].sketches[s].data();
      const auto& content = dataset[i].color.data();
      auto o1 = model(content, reference_pair.sketches[s]);
      auto o1_data = checked_output(o1, truth);
      auto o2_data = checked_output(model(content, o1), truth);
      first.add(s, o1_data, truth, backbones.lpips);
      cyclic.add(s, o2_data, against == CyclicTarget::FirstOutput ? o1_data : truth, backbones.lpips);
    }
    log::debug("cyclic shape ", i + 1, "/", kEvalShapes);
  }
  MetricReport report;
  report.protocol = "cyclic";
  report.against = to_string(against);
  report.resolution = dataset.front().color.data().size(1);
  report.n = static_cast<int>(cyclic.outcomes.size());
  report.sections.push_back(
      summarize("first_pass", first.outcomes, first.produced, first.targets, backbones));
  report.sections.push_back(
      summarize("cyclic", cyclic.outcomes, cyclic.produced, cyclic.targets, backbones));
  return report;
}

MetricReport cyclic_evaluate(const std::filesystem::path& checkpoint,
                             const std::filesystem::path& dataset_root,
                             const EvalBackbones& backbones, CyclicTarget against) {
  auto dataset = load_4skst(dataset_root, kEvalResolution);
  return cyclic_evaluate(dataset, checkpoint_model(checkpoint, kEvalResolution), backbones, against);
}

}  // namespace refsketch
