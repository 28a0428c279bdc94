#include "refsketch/curation.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "refsketch/csv.hpp"
#include "refsketch/errors.hpp"
#include "refsketch/logging.hpp"

namespace refsketch {

namespace {

std::string two_digits(int i) {
  std::ostringstream os;
  os << (i < 10 ? "0" : "") << i;
  return os.str();
}

}  // namespace

std::vector<FeatureVector> extract_cluster_features(const std::vector<torch::Tensor>& images,
                                                    const FeatureExtractor& backbone,
                                                    int64_t input_size) {
  torch::NoGradGuard guard;
  std::vector<FeatureVector> out;
  out.reserve(images.size());
  for (const auto& image : images) {
    auto batch = refsketch::resize(image.to(torch::kFloat32), {input_size, input_size}).unsqueeze(0);
    if (backbone.input_channels() == 3 && batch.size(1) == 1) batch = batch.expand({-1, 3, -1, -1});
    auto v = extract_vectors(backbone, batch).squeeze(0).to(torch::kFloat64).contiguous();
    out.emplace_back(v.data_ptr<double>(), v.data_ptr<double>() + v.numel());
  }
  return out;
}

std::vector<FeatureVector> extract_cluster_features(const std::vector<std::filesystem::path>& paths,
                                                    const FeatureExtractor& backbone,
                                                    int64_t input_size) {
  std::vector<FeatureVector> out;
  out.reserve(paths.size());
  for (const auto& p : paths) {
    auto image = load_color(p).data();
    if (backbone.input_channels() != 3) image = to_gray(image);
    out.push_back(extract_cluster_features(std::vector<torch::Tensor>{image}, backbone, input_size)
                      .front());
  }
  return out;
}

CullResult cull_improper(const std::vector<FeatureVector>& features, const CullOptions& options,
                         const KeepReviewer& reviewer) {
  if (features.empty()) throw Error(ErrorKind::EmptyInput, "nothing to cull");
  CullResult result;
  std::vector<size_t> alive(features.size());
  for (size_t i = 0; i < alive.size(); ++i) alive[i] = i;

  for (int round = 0; round < options.rounds; ++round) {
    std::vector<FeatureVector> subset;
    subset.reserve(alive.size());
    for (size_t i : alive) subset.push_back(features[i]);
    KMeansOptions km;
    km.k = std::min<int>(options.k, static_cast<int>(subset.size()));
    km.max_iter = options.max_iter;
    km.seed = options.seed + static_cast<uint64_t>(round);
    auto clusters = kmeans(subset, km);
    const auto keep = reviewer(round, clusters, alive);

    std::vector<size_t> next;
    for (size_t j = 0; j < alive.size(); ++j) {
      if (keep.count(clusters.labels[j])) next.push_back(alive[j]);
    }
    result.rounds.push_back(std::move(clusters));
    result.members.push_back(alive);
    if (next.empty()) {
      throw Error(ErrorKind::AllCulled, "round " + std::to_string(round + 1) + " removed every item");
    }
    alive = std::move(next);
  }
  result.kept = std::move(alive);
  return result;
}

ClusterAssignment identify_styles(const std::vector<FeatureVector>& features, int k,
                                  uint64_t seed, int max_iter) {
  KMeansOptions km;
  km.k = k;
  km.seed = seed;
  km.max_iter = max_iter;
  return kmeans(features, km);
}

std::vector<std::filesystem::path> write_contact_sheets(
    const std::vector<std::filesystem::path>& images, const std::vector<int>& labels,
    const std::filesystem::path& dir, const std::string& prefix, int64_t thumb, int64_t columns,
    int64_t max_per_sheet) {
  if (images.size() != labels.size()) {
    throw Error(ErrorKind::ShapeMismatch, "contact sheet needs one label per image");
  }
  std::filesystem::create_directories(dir);
  std::map<int, std::vector<size_t>> groups;
  for (size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);

  std::vector<std::filesystem::path> written;
  for (const auto& [label, members] : groups) {
    const int64_t count = std::min<int64_t>(static_cast<int64_t>(members.size()), max_per_sheet);
    const int64_t cols = std::min(columns, count);
    const int64_t rows = (count + cols - 1) / cols;
    auto sheet = torch::ones({3, rows * thumb, cols * thumb});
    for (int64_t n = 0; n < count; ++n) {
      auto tile = refsketch::resize(load_color(images[members[n]]).data(), {thumb, thumb});
      sheet.narrow(1, (n / cols) * thumb, thumb).narrow(2, (n % cols) * thumb, thumb).copy_(tile);
    }
    auto path = dir / (prefix + "_cluster" + std::to_string(label) + ".png");
    save_image(sheet, path);
    written.push_back(path);
  }
  return written;
}

void write_cluster_manifest(const std::vector<std::filesystem::path>& images,
                            const std::vector<int>& labels, const std::filesystem::path& out) {
  if (images.size() != labels.size()) {
    throw Error(ErrorKind::ShapeMismatch, "cluster manifest needs one label per image");
  }
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream file(out);
  if (!file) throw Error(ErrorKind::IOError, "cannot write " + out.string());
  file << "path,label\n";
  for (size_t i = 0; i < images.size(); ++i) {
    file << csv::escape(images[i].string()) << ',' << labels[i] << '\n';
  }
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::MissingFile, dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path());
  }
  if (out.empty()) throw Error(ErrorKind::EmptyDirectory, dir.string());
  std::sort(out.begin(), out.end());
  return out;
}

UnpairedBatches::UnpairedBatches(std::vector<std::filesystem::path> colors,
                                 std::vector<std::filesystem::path> sketches, int batch,
                                 uint64_t seed)
    : colors_(std::move(colors)), sketches_(std::move(sketches)), batch_(batch), seed_(seed) {
  if (colors_.empty()) throw Error(ErrorKind::EmptyDirectory, "no color images");
  if (sketches_.empty()) throw Error(ErrorKind::EmptyDirectory, "no sketch images");
  if (batch_ < 1) throw Error(ErrorKind::InvalidConfig, "batch must be >= 1");
}

UnpairedBatches::UnpairedBatches(const std::filesystem::path& color_dir,
                                 const std::filesystem::path& sketch_dir, int batch, uint64_t seed)
    : UnpairedBatches(list_images(color_dir), list_images(sketch_dir), batch, seed) {}

size_t UnpairedBatches::batches_per_epoch() const {
  return (colors_.size() + static_cast<size_t>(batch_) - 1) / static_cast<size_t>(batch_);
}

std::vector<PairBatch> UnpairedBatches::epoch(int index) const {
  std::seed_seq seq{static_cast<uint32_t>(seed_), static_cast<uint32_t>(seed_ >> 32),
                    static_cast<uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::vector<size_t> order(colors_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<size_t> ref(0, sketches_.size() - 1);

  std::vector<PairBatch> batches;
  for (size_t start = 0; start < order.size(); start += batch_) {
    PairBatch b;
    for (size_t k = start; k < std::min(order.size(), start + static_cast<size_t>(batch_)); ++k) {
      b.colors.push_back(colors_[order[k]]);
      b.references.push_back(sketches_[ref(rng)]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<EvalPairPaths> index_4skst(const std::filesystem::path& root) {
  std::vector<EvalPairPaths> pairs;
  std::vector<std::string> missing;
  auto require = [&](const std::filesystem::path& p) {
    if (!std::filesystem::is_regular_file(p)) missing.push_back(p.lexically_relative(root).string());
    return p;
  };
  for (int shape = 0; shape < kEvalShapes; ++shape) {
    const auto stem = two_digits(shape) + ".png";
    EvalPairPaths pair;
    pair.shape = std::stoi(std::filesystem::path(stem).stem().string());
    pair.color = require(root / "color" / stem);
    for (int s = 0; s < kEvalStyles; ++s) {
      pair.sketches[s] = require(root / ("style" + std::to_string(s + 1)) / stem);
    }
    pairs.push_back(std::move(pair));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw Error(ErrorKind::IncompleteDataset, "missing " + list);
  }
  return pairs;
}

std::vector<EvalPair> load_4skst(const std::filesystem::path& root, int64_t resolution) {
  const Size2 size{resolution, resolution};
  std::vector<EvalPair> out;
  for (const auto& p : index_4skst(root)) {
    auto color = refsketch::resize(load_color(p.color), size);
    auto sketch = [&](int s) { return refsketch::resize(load_sketch(p.sketches[s]), size); };
    out.push_back(EvalPair{p.shape, color, {sketch(0), sketch(1), sketch(2), sketch(3)}});
  }
  return out;
}

}  // namespace refsketch
