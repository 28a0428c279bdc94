#include "refsketch/style_pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "refsketch/archive.hpp"
#include "refsketch/csv.hpp"
#include "refsketch/errors.hpp"
#include "refsketch/imaging.hpp"
#include "refsketch/logging.hpp"

namespace refsketch {

namespace {

constexpr int kStyleEncoderFormat = 1;

size_t pick(const std::vector<size_t>& items, std::mt19937_64& rng) {
  std::uniform_int_distribution<size_t> dist(0, items.size() - 1);
  return items[dist(rng)];
}

}  // namespace

StyleCorpus::StyleCorpus(std::vector<CorpusEntry> entries) : entries_(std::move(entries)) {
  for (size_t i = 0; i < entries_.size(); ++i) {
    by_style_[entries_[i].style_id].push_back(i);
    by_shape_[entries_[i].shape_id].push_back(i);
  }
}

StyleCorpus StyleCorpus::load_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorKind::MissingFile, manifest.string());
  std::string line;
  std::vector<CorpusEntry> entries;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = csv::split(line);
    if (header) {
      header = false;
      if (fields.size() >= 3 && fields[0] == "path") continue;
    }
    if (fields.size() != 3) {
      throw Error(ErrorKind::IOError, "manifest row needs path,shape_id,style_id: " + line);
    }
    std::filesystem::path path = fields[0];
    if (path.is_relative()) path = manifest.parent_path() / path;
    entries.push_back({path, fields[1], fields[2]});
  }
  return StyleCorpus(std::move(entries));
}

void StyleCorpus::save_manifest(const std::filesystem::path& manifest) const {
  std::ofstream out(manifest);
  if (!out) throw Error(ErrorKind::IOError, "cannot write " + manifest.string());
  out << "path,shape_id,style_id\n";
  const auto base = manifest.parent_path();
  for (const auto& e : entries_) {
    auto path = e.path;
    if (!base.empty() && path.is_absolute() == base.is_absolute()) {
      auto rel = path.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") path = rel;
    }
    out << csv::escape(path.string()) << ',' << csv::escape(e.shape_id) << ','
        << csv::escape(e.style_id) << '\n';
  }
}

void StyleCorpus::validate() const {
  if (by_style_.size() < 2) {
    throw Error(ErrorKind::InsufficientCorpus, "corpus needs at least two styles");
  }
  for (const auto& [shape, members] : by_shape_) {
    std::set<std::string> styles;
    for (size_t i : members) styles.insert(entries_[i].style_id);
    if (styles.size() < 2) {
      throw Error(ErrorKind::InsufficientCorpus,
                  "shape '" + shape + "' appears under a single style");
    }
  }
}

const std::vector<size_t>& StyleCorpus::with_style(const std::string& style) const {
  static const std::vector<size_t> kEmpty;
  auto it = by_style_.find(style);
  return it == by_style_.end() ? kEmpty : it->second;
}

std::vector<size_t> StyleCorpus::same_shape_other_style(const std::string& shape,
                                                        const std::string& style) const {
  std::vector<size_t> out;
  auto it = by_shape_.find(shape);
  if (it == by_shape_.end()) return out;
  for (size_t i : it->second) {
    if (entries_[i].style_id != style) out.push_back(i);
  }
  return out;
}

Triplet sample_triplet_for_anchor(const StyleCorpus& corpus, size_t anchor, std::mt19937_64& rng) {
  const auto& entry = corpus.entries().at(anchor);
  auto negatives = corpus.same_shape_other_style(entry.shape_id, entry.style_id);
  if (negatives.empty()) {
    throw Error(ErrorKind::InsufficientCorpus,
                "no same-shape, other-style negative for " + entry.path.string());
  }
  std::vector<size_t> positives;
  for (size_t i : corpus.with_style(entry.style_id)) {
    if (i != anchor) positives.push_back(i);
  }
  Triplet t;
  t.anchor = anchor;
  t.positive = positives.empty() ? anchor : pick(positives, rng);
  t.negative = pick(negatives, rng);
  return t;
}

Triplet sample_triplet(const StyleCorpus& corpus, std::mt19937_64& rng, int max_attempts) {
  if (corpus.size() == 0) throw Error(ErrorKind::InsufficientCorpus, "empty corpus");
  std::uniform_int_distribution<size_t> dist(0, corpus.size() - 1);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const size_t anchor = dist(rng);
    const auto& e = corpus.entries()[anchor];
    if (corpus.same_shape_other_style(e.shape_id, e.style_id).empty()) continue;
    return sample_triplet_for_anchor(corpus, anchor, rng);
  }
  throw Error(ErrorKind::InsufficientCorpus,
              "no valid triplet after " + std::to_string(max_attempts) + " attempts");
}

double triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const double> negative, double margin) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw Error(ErrorKind::ShapeMismatch, "triplet embeddings differ in length");
  }
  double pos = 0.0;
  double neg = 0.0;
  for (size_t i = 0; i < anchor.size(); ++i) {
    pos += (anchor[i] - positive[i]) * (anchor[i] - positive[i]);
    neg += (anchor[i] - negative[i]) * (anchor[i] - negative[i]);
  }
  return std::max(pos - neg + margin, 0.0);
}

torch::Tensor triplet_loss(const torch::Tensor& anchor, const torch::Tensor& positive,
                           const torch::Tensor& negative, double margin) {
  if (anchor.sizes() != positive.sizes() || anchor.sizes() != negative.sizes() ||
      anchor.dim() != 2) {
    throw Error(ErrorKind::ShapeMismatch, "triplet embeddings must share an NxD shape");
  }
  auto pos = (anchor - positive).pow(2).sum(1);
  auto neg = (anchor - negative).pow(2).sum(1);
  return torch::clamp_min(pos - neg + margin, 0.0).mean();
}

TripletEmbeddings embed_triplets(StyleEncoder& encoder, const torch::Tensor& anchor,
                                 const torch::Tensor& positive, const torch::Tensor& negative) {
  const int64_t n = anchor.size(0);
  auto all = encoder->forward(torch::cat({anchor, positive, negative}, 0));
  return {all.narrow(0, 0, n), all.narrow(0, n, n), all.narrow(0, 2 * n, n)};
}

double pretrain_lr(int epoch, int total_epochs, double base) {
  if (total_epochs < 1 || epoch < 0 || epoch > total_epochs) {
    throw Error(ErrorKind::OutOfRange, "epoch " + std::to_string(epoch) + " of " +
                                           std::to_string(total_epochs));
  }
  const double half = total_epochs / 2.0;
  if (epoch <= half) return base;
  return base * (1.0 - (epoch - half) / half);
}

torch::Tensor load_sketch_batch(const std::filesystem::path& path, int64_t resolution) {
  auto sketch = load_sketch(path);
  return refsketch::resize(sketch.data(), {resolution, resolution}).unsqueeze(0);
}

void save_style_encoder(StyleEncoder& encoder, const std::filesystem::path& path) {
  TensorArchive archive;
  archive.metadata = {{"kind", "style_encoder"},
                      {"format_version", kStyleEncoderFormat},
                      {"width", encoder->options.width()},
                      {"embedding", kStyleEmbeddingSize}};
  archive.put_module("", *encoder);
  archive.save(path);
}

StyleEncoder load_style_encoder(const std::filesystem::path& path) {
  auto archive = TensorArchive::load(path);
  if (archive.metadata.value("kind", "") != "style_encoder") {
    throw Error(ErrorKind::IOError, path.string() + " is not a style-encoder archive");
  }
  if (archive.metadata.value("format_version", 0) != kStyleEncoderFormat) {
    throw Error(ErrorKind::CheckpointVersionMismatch, path.string());
  }
  StyleEncoder encoder(StyleEncoderOptions().width(archive.metadata.value("width", kDefaultWidth)));
  archive.get_module("", *encoder);
  freeze(*encoder);
  return encoder;
}

PretrainResult pretrain_style_encoder(const StyleCorpus& corpus, const PretrainConfig& config,
                                      const std::function<void(int, double)>& on_epoch) {
  corpus.validate();
  if (config.epochs < 1 || config.batch < 1 || config.lr <= 0.0 || config.margin <= 0.0) {
    throw Error(ErrorKind::InvalidConfig, "pretraining needs epochs, batch, lr, margin > 0");
  }
  torch::manual_seed(config.seed);
  std::mt19937_64 rng(config.seed);

  StyleEncoder encoder(StyleEncoderOptions().width(config.width));
  encoder->train();
  torch::optim::Adam optimizer(encoder->parameters(), torch::optim::AdamOptions(config.lr));

  // Small corpora are decoded once; large ones stream from disk.
  const double bytes = static_cast<double>(corpus.size()) * config.resolution *
                       config.resolution * sizeof(float);
  const bool cache_all = bytes < 512.0 * 1024 * 1024;
  std::vector<torch::Tensor> cache(corpus.size());
  auto image = [&](size_t index) {
    if (cache_all && cache[index].defined()) return cache[index];
    auto t = load_sketch_batch(corpus.entries()[index].path, config.resolution);
    if (cache_all) cache[index] = t;
    return t;
  };

  std::ofstream log;
  if (!config.log.empty()) {
    log.open(config.log);
    if (!log) throw Error(ErrorKind::IOError, "cannot write " + config.log.string());
    log << "epoch,lr,mean_triplet_loss\n";
  }

  PretrainResult result;
  std::vector<size_t> order(corpus.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = pretrain_lr(epoch, config.epochs, config.lr);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += config.batch) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(config.batch));
      std::vector<torch::Tensor> a, p, n;
      for (size_t k = start; k < stop; ++k) {
        auto t = sample_triplet_for_anchor(corpus, order[k], rng);
        a.push_back(image(t.anchor));
        p.push_back(image(t.positive));
        n.push_back(image(t.negative));
      }
      auto emb = embed_triplets(encoder, torch::cat(a), torch::cat(p), torch::cat(n));
      auto loss = triplet_loss(emb.anchor, emb.positive, emb.negative, config.margin);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        // Parameters have not been stepped with this loss, so they are the last finite state.
        if (!config.out.empty()) {
          auto diverged = config.out;
          diverged += ".diverged";
          save_style_encoder(encoder, diverged);
        }
        throw Error(ErrorKind::DivergenceDetected,
                    "triplet loss became non-finite at epoch " + std::to_string(epoch));
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      loss_sum += value;
      ++batches;
    }
    const double mean = loss_sum / std::max(batches, 1);
    result.epoch_losses.push_back(mean);
    if (log) log << epoch << ',' << lr << ',' << mean << '\n';
    if (on_epoch) on_epoch(epoch, mean);
    log::debug("pretrain epoch ", epoch, " lr ", lr, " triplet ", mean);
  }

  freeze(*encoder);
  if (!config.out.empty()) save_style_encoder(encoder, config.out);
  result.encoder = encoder;
  return result;
}

std::vector<EmbeddingRow> compute_embeddings(StyleEncoder& encoder,
                                             const std::vector<CorpusEntry>& sketches,
                                             int64_t resolution) {
  torch::NoGradGuard guard;
  encoder->eval();
  std::vector<EmbeddingRow> rows;
  rows.reserve(sketches.size());
  for (const auto& s : sketches) {
    auto e = encoder->forward(load_sketch_batch(s.path, resolution)).squeeze(0).contiguous();
    EmbeddingRow row{s.path.string(), s.style_id, {}};
    row.values.assign(e.data_ptr<float>(), e.data_ptr<float>() + e.numel());
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_embeddings_csv(const std::vector<EmbeddingRow>& rows, const std::filesystem::path& out) {
  std::ofstream file(out);
  if (!file) throw Error(ErrorKind::IOError, "cannot write " + out.string());
  file << "path,style";
  for (int64_t i = 0; i < kStyleEmbeddingSize; ++i) file << ",e" << i;
  file << '\n';
  char buf[32];
  for (const auto& row : rows) {
    file << csv::escape(row.path) << ',' << csv::escape(row.style);
    for (float v : row.values) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
      file << ',' << buf;
    }
    file << '\n';
  }
  if (!file) throw Error(ErrorKind::IOError, "failed writing " + out.string());
}

std::vector<EmbeddingRow> read_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  std::vector<EmbeddingRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = csv::split(line);
    if (fields.size() < 2) throw Error(ErrorKind::IOError, "bad embedding row: " + line);
    EmbeddingRow row{fields[0], fields[1], {}};
    for (size_t i = 2; i < fields.size(); ++i) row.values.push_back(std::stof(fields[i]));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace refsketch
