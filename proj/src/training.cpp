#include "refsketch/training.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <fstream>

#include "refsketch/archive.hpp"
#include "refsketch/curation.hpp"
#include "refsketch/errors.hpp"
#include "refsketch/logging.hpp"
#include "refsketch/style_pretrain.hpp"

namespace refsketch {

namespace {

void set_requires_grad(torch::nn::Module& module, bool on) {
  for (auto& p : module.parameters()) p.set_requires_grad(on);
}

std::vector<torch::Tensor> generator_parameters(SketchGenerator& gs, ColorGenerator& gc) {
  auto params = gs->parameters();
  auto more = gc->parameters();
  params.insert(params.end(), more.begin(), more.end());
  return params;
}

void clip(const std::vector<torch::Tensor>& params, double max_norm) {
  if (max_norm > 0.0) torch::nn::utils::clip_grad_norm_(params, max_norm);
}

void put_optimizer(TensorArchive& archive, const std::string& prefix,
                   torch::optim::Adam& optimizer) {
  int64_t index = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      auto it = optimizer.state().find(p.unsafeGetTensorImpl());
      if (it != optimizer.state().end()) {
        auto& state = static_cast<torch::optim::AdamParamState&>(*it->second);
        const auto key = prefix + std::to_string(index);
        archive.put(key + ".step", torch::tensor(state.step(), torch::kInt64));
        archive.put(key + ".exp_avg", state.exp_avg());
        archive.put(key + ".exp_avg_sq", state.exp_avg_sq());
      }
      ++index;
    }
  }
}

void get_optimizer(const TensorArchive& archive, const std::string& prefix,
                   torch::optim::Adam& optimizer) {
  int64_t index = 0;
  optimizer.state().clear();
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      const auto key = prefix + std::to_string(index);
      if (archive.contains(key + ".step")) {
        auto state = std::make_unique<torch::optim::AdamParamState>();
        state->step(archive.get(key + ".step").item<int64_t>());
        state->exp_avg(archive.get(key + ".exp_avg").to(p.options()).clone());
        state->exp_avg_sq(archive.get(key + ".exp_avg_sq").to(p.options()).clone());
        optimizer.state()[p.unsafeGetTensorImpl()] = std::move(state);
      }
      ++index;
    }
  }
}

ExtractorPtr resolve_extractor(const std::string& kind, const std::filesystem::path& weights,
                               const std::string& fallback, const char* role) {
  const bool needs_weights = kind == "vgg16" || kind == "hed";
  if (needs_weights && (weights.empty() || !std::filesystem::exists(weights))) {
    log::warn(role, " extractor '", kind, "' has no weights; using analytic '", fallback, "'");
    return make_extractor(fallback);
  }
  return make_extractor(kind, weights);
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch < 1) fail("batch must be >= 1");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (resolution < 16 || resolution % 16 != 0) fail("resolution must be a multiple of 16");
  if (width < 1 || disc_width < 1) fail("widths must be >= 1");
  if ((8 * width) % kDefaultReduction != 0) fail("8 * width must be divisible by 16");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) fail("Adam betas in [0, 1)");
  if (clip_norm < 0.0) fail("clip_norm must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch", batch},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"resolution", resolution},
          {"width", width},
          {"disc_width", disc_width},
          {"seed", seed},
          {"no_attention", ablation.no_attention},
          {"no_style", ablation.no_style},
          {"no_line", ablation.no_line},
          {"no_cyc", ablation.no_cyc},
          {"saturating", saturating},
          {"clip_norm", clip_norm},
          {"edge_extractor", edge_extractor},
          {"perceptual_extractor", perceptual_extractor},
          {"hed_weights", hed_weights.string()},
          {"vgg_weights", vgg_weights.string()},
          {"style_encoder", style_encoder.string()},
          {"out_dir", out_dir.string()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.resolution = j.value("resolution", c.resolution);
  c.width = j.value("width", c.width);
  c.disc_width = j.value("disc_width", c.disc_width);
  c.seed = j.value("seed", c.seed);
  c.ablation.no_attention = j.value("no_attention", false);
  c.ablation.no_style = j.value("no_style", false);
  c.ablation.no_line = j.value("no_line", false);
  c.ablation.no_cyc = j.value("no_cyc", false);
  c.saturating = j.value("saturating", false);
  c.clip_norm = j.value("clip_norm", 0.0);
  c.edge_extractor = j.value("edge_extractor", c.edge_extractor);
  c.perceptual_extractor = j.value("perceptual_extractor", c.perceptual_extractor);
  c.hed_weights = j.value("hed_weights", std::string());
  c.vgg_weights = j.value("vgg_weights", std::string());
  c.style_encoder = j.value("style_encoder", std::string());
  c.out_dir = j.value("out_dir", c.out_dir.string());
  return c;
}

double lr_schedule(int epoch, int total, double base) {
  if (total < 1 || epoch < 0 || epoch > total) {
    throw Error(ErrorKind::OutOfRange, "epoch " + std::to_string(epoch) + " of " +
                                           std::to_string(total));
  }
  const double half = total / 2.0;
  if (epoch < half) return base;
  return base * (1.0 - (epoch - half) / half);
}

FrozenNetworks make_frozen_networks(const TrainConfig& config) {
  FrozenNetworks frozen;
  if (!config.ablation.no_style) {
    if (config.style_encoder.empty()) {
      throw Error(ErrorKind::InvalidConfig,
                  "style loss needs a pretrained style encoder (--style-encoder) or --no-style");
    }
    frozen.style = load_style_encoder(config.style_encoder);
  }
  if (!config.ablation.no_line) {
    frozen.edges = resolve_extractor(config.edge_extractor, config.hed_weights, "sobel", "edge");
    frozen.perceptual =
        resolve_extractor(config.perceptual_extractor, config.vgg_weights, "identity", "perceptual");
  }
  return frozen;
}

GeneratorOptions generator_options(const TrainConfig& config) {
  return GeneratorOptions()
      .width(config.width)
      .resolution(config.resolution)
      .attention(!config.ablation.no_attention);
}

DiscriminatorOptions discriminator_options(const TrainConfig& config) {
  return DiscriminatorOptions().width(config.disc_width).resolution(config.resolution);
}

Trainer::Trainer(TrainConfig config, FrozenNetworks frozen)
    : config_(std::move(config)), frozen_(std::move(frozen)) {
  config_.validate();
  if (!config_.ablation.no_style) {
    if (!frozen_.style) throw Error(ErrorKind::UninitializedParams, "style encoder missing");
    if (!is_frozen(*frozen_.style)) {
      throw Error(ErrorKind::EncoderNotFrozen, "style encoder must be frozen before training");
    }
  }
  if (!config_.ablation.no_line && (!frozen_.edges || !frozen_.perceptual)) {
    throw Error(ErrorKind::UninitializedParams, "line loss extractors missing");
  }
  torch::manual_seed(config_.seed);
  gs_ = SketchGenerator(generator_options(config_));
  gc_ = ColorGenerator(generator_options(config_));
  d_ = PatchDiscriminator(discriminator_options(config_));
  auto adam = torch::optim::AdamOptions(config_.lr).betas({config_.beta1, config_.beta2});
  opt_g_ = std::make_unique<torch::optim::Adam>(generator_parameters(gs_, gc_), adam);
  opt_d_ = std::make_unique<torch::optim::Adam>(d_->parameters(), adam);
}

void Trainer::set_learning_rate(double lr) {
  for (auto* opt : {opt_g_.get(), opt_d_.get()}) {
    for (auto& group : opt->param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
  }
}

double Trainer::learning_rate() const {
  return static_cast<const torch::optim::AdamOptions&>(opt_g_->param_groups().front().options())
      .lr();
}

LossBreakdown Trainer::train_step(const torch::Tensor& colors, const torch::Tensor& references,
                                  const LossWeights& weights, const StepOptions& options) {
  if (colors.dim() != 4 || colors.size(1) != 3 || references.dim() != 4 ||
      references.size(1) != 1 || colors.size(0) != references.size(0)) {
    throw Error(ErrorKind::ShapeMismatch, "train_step expects Nx3xRxR colors and Nx1xRxR references");
  }
  gs_->train();
  gc_->train();
  d_->train();

  auto output = gs_->forward(to_gray(colors), references);
  auto reconstructed = gc_->forward(output);

  // Discriminator phase.
  std::vector<std::pair<std::string, torch::Tensor>> before;
  if (options.audit) {
    before = snapshot_state(*gs_);
    auto more = snapshot_state(*gc_);
    before.insert(before.end(), more.begin(), more.end());
  }
  set_requires_grad(*d_, true);
  auto real_logits = d_->forward(references);
  auto fake_logits = d_->forward(output.detach());
  auto d_loss = torch::nn::functional::softplus(-real_logits).mean() +
                torch::nn::functional::softplus(fake_logits).mean();
  const double d_value = d_loss.item<double>();
  if (!std::isfinite(d_value)) {
    throw Error(ErrorKind::NonFiniteLoss, "discriminator loss is not finite");
  }
  opt_d_->zero_grad();
  d_loss.backward();
  clip(d_->parameters(), config_.clip_norm);
  opt_d_->step();
  if (options.audit) {
    auto after = snapshot_state(*gs_);
    auto more = snapshot_state(*gc_);
    after.insert(after.end(), more.begin(), more.end());
    // Batch-norm running statistics moved during the forward pass above, not
    // in the discriminator step; compare parameters only.
    for (size_t i = 0; i < before.size(); ++i) {
      if (before[i].first.find("running_") != std::string::npos ||
          before[i].first.find("num_batches") != std::string::npos) {
        continue;
      }
      if (!torch::equal(before[i].second, after[i].second)) {
        throw Error(ErrorKind::InvalidConfig, "discriminator step modified " + before[i].first);
      }
    }
  }

  // Generator phase: the discriminator passes gradients through but is not updated.
  auto d_before = options.audit ? snapshot_state(*d_) : decltype(before){};
  set_requires_grad(*d_, false);
  auto zero = torch::zeros({}, colors.options());
  auto style = config_.ablation.no_style ? zero : style_loss(output, references, frozen_.style);
  auto line = config_.ablation.no_line
                  ? zero
                  : line_loss(colors, reconstructed, *frozen_.edges, *frozen_.perceptual);
  auto cyc = config_.ablation.no_cyc ? zero : cycle_loss(colors, reconstructed);
  auto gen_logits = d_->forward(output);
  auto adv_g = config_.saturating ? -torch::nn::functional::softplus(gen_logits).mean()
                                  : torch::nn::functional::softplus(-gen_logits).mean();
  auto total = weights.style * style + weights.line * line + weights.cyc * cyc + weights.adv * adv_g;

  LossBreakdown out;
  out.style = style.item<double>();
  out.line = line.item<double>();
  out.cyc = cyc.item<double>();
  out.adv_g = adv_g.item<double>();
  out.adv_d = d_value;
  try {
    out.total_g = total_generator_loss({out.style, out.line, out.cyc, out.adv_g}, weights);
  } catch (const Error&) {
    set_requires_grad(*d_, true);
    throw Error(ErrorKind::NonFiniteLoss, "generator loss term is not finite");
  }

  opt_g_->zero_grad();
  total.backward();
  clip(generator_parameters(gs_, gc_), config_.clip_norm);
  opt_g_->step();
  set_requires_grad(*d_, true);
  if (options.audit) {
    auto d_after = snapshot_state(*d_);
    if (!same_state(d_before, d_after)) {
      throw Error(ErrorKind::InvalidConfig, "generator step modified the discriminator");
    }
  }
  return out;
}

void Trainer::save_checkpoint(const std::filesystem::path& path, int epoch) const {
  TensorArchive archive;
  archive.metadata = {{"kind", "checkpoint"},
                      {"format_version", kCheckpointFormatVersion},
                      {"epoch", epoch},
                      {"lr", learning_rate()},
                      {"config", config_.to_json()}};
  archive.put_module("gs.", *gs_);
  archive.put_module("gc.", *gc_);
  archive.put_module("d.", *d_);
  put_optimizer(archive, "opt_g.", *opt_g_);
  put_optimizer(archive, "opt_d.", *opt_d_);
  archive.put("rng.torch_cpu", at::detail::getDefaultCPUGenerator().get_state());
  archive.save(path);
}

int Trainer::load_checkpoint(const std::filesystem::path& path) {
  auto archive = TensorArchive::load(path);
  if (archive.metadata.value("kind", "") != "checkpoint") {
    throw Error(ErrorKind::IOError, path.string() + " is not a training checkpoint");
  }
  if (archive.metadata.value("format_version", 0) != kCheckpointFormatVersion) {
    throw Error(ErrorKind::CheckpointVersionMismatch,
                path.string() + " has format version " +
                    std::to_string(archive.metadata.value("format_version", 0)));
  }
  archive.get_module("gs.", *gs_);
  archive.get_module("gc.", *gc_);
  archive.get_module("d.", *d_);
  get_optimizer(archive, "opt_g.", *opt_g_);
  get_optimizer(archive, "opt_d.", *opt_d_);
  if (archive.contains("rng.torch_cpu")) {
    auto generator = at::detail::getDefaultCPUGenerator();
    generator.set_state(archive.get("rng.torch_cpu"));
  }
  set_learning_rate(archive.metadata.value("lr", config_.lr));
  return archive.metadata.value("epoch", 0);
}

std::pair<torch::Tensor, torch::Tensor> load_training_batch(
    const std::vector<std::filesystem::path>& colors,
    const std::vector<std::filesystem::path>& references, int64_t resolution) {
  const Size2 size{resolution, resolution};
  std::vector<torch::Tensor> c, r;
  for (const auto& p : colors) c.push_back(refsketch::resize(load_color(p).data(), size));
  for (const auto& p : references) r.push_back(refsketch::resize(load_sketch(p).data(), size));
  return {torch::stack(c), torch::stack(r)};
}

TrainResult train(const TrainConfig& config, const TrainData& data, FrozenNetworks frozen,
                  const std::optional<std::filesystem::path>& resume,
                  const std::function<void(const StepRecord&)>& on_step) {
  config.validate();
  Trainer trainer(config, std::move(frozen));
  int start = 0;
  if (resume) start = trainer.load_checkpoint(*resume);

  std::filesystem::create_directories(config.out_dir);
  {
    std::ofstream cfg(config.out_dir / "config.json");
    cfg << config.to_json().dump(2) << '\n';
  }
  const auto log_path = config.out_dir / "losses.csv";
  const bool fresh_log = start == 0 || !std::filesystem::exists(log_path);
  std::ofstream log_file(log_path, fresh_log ? std::ios::trunc : std::ios::app);
  if (!log_file) throw Error(ErrorKind::IOError, "cannot write " + log_path.string());
  if (fresh_log) {
    log_file << "epoch,step,lr,lambda_style,lambda_line,lambda_cyc,lambda_adv,style,line,cyc,"
                "adv_g,adv_d,total_g\n";
  }

  UnpairedBatches batches(data.color_dir, data.sketch_dir, config.batch, config.seed);
  TrainResult result;
  result.epochs_completed = start;
  int step = start * static_cast<int>(batches.batches_per_epoch());
  for (int epoch = start; epoch < config.epochs; ++epoch) {
    const auto weights = loss_weights(epoch, config.epochs);
    const double lr = lr_schedule(epoch, config.epochs, config.lr);
    trainer.set_learning_rate(lr);
    for (const auto& b : batches.epoch(epoch)) {
      auto [colors, refs] = load_training_batch(b.colors, b.references, config.resolution);
      LossBreakdown losses;
      try {
        losses = trainer.train_step(colors, refs, weights);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::NonFiniteLoss) {
          std::string ids;
          for (const auto& p : b.colors) ids += " " + p.filename().string();
          log::error("non-finite loss at epoch ", epoch, " step ", step, "; colors:", ids);
        }
        throw;
      }
      log_file << epoch << ',' << step << ',' << lr << ',' << weights.style << ','
               << weights.line << ',' << weights.cyc << ',' << weights.adv << ',' << losses.style
               << ',' << losses.line << ',' << losses.cyc << ',' << losses.adv_g << ','
               << losses.adv_d << ',' << losses.total_g << '\n';
      if (on_step) on_step({epoch, step, lr, weights, losses});
      ++step;
    }
    log_file.flush();
    const auto ckpt = config.out_dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt");
    trainer.save_checkpoint(ckpt, epoch + 1);
    result.final_checkpoint = ckpt;
    result.epochs_completed = epoch + 1;
    log::info("epoch ", epoch + 1, "/", config.epochs, " lr ", lr, " lambda_style ",
              weights.style, " -> ", ckpt.string());
  }
  return result;
}

LoadedModel load_sketch_model(const std::filesystem::path& checkpoint) {
  auto archive = TensorArchive::load(checkpoint);
  if (archive.metadata.value("kind", "") != "checkpoint") {
    throw Error(ErrorKind::IOError, checkpoint.string() + " is not a training checkpoint");
  }
  if (archive.metadata.value("format_version", 0) != kCheckpointFormatVersion) {
    throw Error(ErrorKind::CheckpointVersionMismatch,
                checkpoint.string() + " has format version " +
                    std::to_string(archive.metadata.value("format_version", 0)));
  }
  LoadedModel model;
  model.config = TrainConfig::from_json(archive.metadata.at("config"));
  model.epoch = archive.metadata.value("epoch", 0);
  model.generator = SketchGenerator(generator_options(model.config));
  archive.get_module("gs.", *model.generator);
  model.generator->eval();
  return model;
}

SketchImage extract_sketch(SketchGenerator& generator, const torch::Tensor& content,
                           const SketchImage& reference) {
  torch::NoGradGuard guard;
  generator->eval();
  const int64_t r = generator->options.resolution();
  auto gray = content.size(0) == 3 ? to_gray(content) : content;
  gray = refsketch::resize(gray, {r, r}).unsqueeze(0);
  auto ref = refsketch::resize(reference.data(), {r, r}).unsqueeze(0);
  return SketchImage(generator->forward(gray, ref).squeeze(0).clamp(-1.0, 1.0));
}

SketchImage extract(const std::filesystem::path& checkpoint, const std::filesystem::path& content,
                    const std::filesystem::path& reference, const std::filesystem::path& out) {
  auto model = load_sketch_model(checkpoint);
  torch::Tensor content_tensor = is_single_channel_file(content) ? load_sketch(content).data()
                                                                 : load_color(content).data();
  auto sketch = extract_sketch(model.generator, content_tensor, load_sketch(reference));
  save_image(sketch, out);
  return sketch;
}

}  // namespace refsketch
