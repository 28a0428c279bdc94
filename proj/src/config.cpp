#include "refsketch/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <sstream>

#include "refsketch/errors.hpp"
#include "refsketch/losses.hpp"

namespace refsketch {

namespace {

using T = SettingType;

const SettingSpec* find_spec(const std::string& section, const std::string& key) {
  for (const auto& s : setting_specs()) {
    if (s.section == section && s.key == key) return &s;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string unquote(std::string s) {
  s = trim(s);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string canonical(const SettingSpec& spec, const std::string& raw) {
  const auto value = unquote(raw);
  auto bad = [&]() {
    return Error(ErrorKind::InvalidConfig,
                 spec.section + "." + spec.key + ": cannot parse '" + value + "'");
  };
  switch (spec.type) {
    case T::Int: {
      int64_t v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size()) throw bad();
      return std::to_string(v);
    }
    case T::Float: {
      double v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size()) throw bad();
      return shortest(v);
    }
    case T::Bool: {
      if (value == "true" || value == "1" || value == "yes" || value == "on") return "true";
      if (value == "false" || value == "0" || value == "no" || value == "off") return "false";
      throw bad();
    }
    case T::Text:
    case T::Path:
      return value;
  }
  return value;
}

}  // namespace

const std::vector<SettingSpec>& setting_specs() {
  static const std::vector<SettingSpec> specs = {
      {"global", "seed", T::Int, "0", "Seed for every random stream"},
      {"global", "device", T::Text, "cpu", "Compute device (cpu only)"},
      {"global", "log_level", T::Text, "info", "debug, info, warn, error or off"},
      {"global", "out_dir", T::Path, ".", "Directory for every written artifact; relative outputs resolve here"},

      {"pretrain", "corpus", T::Path, "", "Manifest CSV of path,shape_id,style_id"},
      {"pretrain", "out", T::Path, "style_encoder.rska", "Encoder archive"},
      {"pretrain", "epochs", T::Int, "200", "Training epochs"},
      {"pretrain", "batch", T::Int, "4", "Triplets per step"},
      {"pretrain", "lr", T::Float, "0.0002", "Base learning rate"},
      {"pretrain", "margin", T::Float, "1", "Triplet margin"},
      {"pretrain", "resolution", T::Int, "256", "Input side length"},
      {"pretrain", "width", T::Int, "64", "First conv width"},

      {"curate", "images", T::Path, "", "Directory of candidate images"},
      {"curate", "extractor", T::Text, "vgg16", "Feature backbone kind"},
      {"curate", "weights", T::Path, "", "Backbone weight archive"},
      {"curate", "input_size", T::Int, "224", "Backbone input side length"},
      {"curate", "k", T::Int, "10", "Clusters per culling round"},
      {"curate", "rounds", T::Int, "3", "Culling rounds"},
      {"curate", "keep", T::Text, "", "Comma-separated cluster labels kept from the last round"},
      {"curate", "styles", T::Int, "4", "Clusters for style identification"},
      {"curate", "max_iter", T::Int, "300", "Lloyd iteration cap"},

      {"train", "color_dir", T::Path, "", "Color image directory"},
      {"train", "sketch_dir", T::Path, "", "Reference sketch directory"},
      {"train", "style_encoder", T::Path, "", "Pretrained style encoder archive"},
      {"train", "resume", T::Path, "", "Checkpoint to continue from"},
      {"train", "epochs", T::Int, "100", "Training epochs"},
      {"train", "batch", T::Int, "4", "Pairs per step"},
      {"train", "lr", T::Float, "0.0002", "Base learning rate"},
      {"train", "beta1", T::Float, "0.5", "Adam beta1"},
      {"train", "beta2", T::Float, "0.999", "Adam beta2"},
      {"train", "resolution", T::Int, "512", "Training side length"},
      {"train", "width", T::Int, "64", "Generator base width"},
      {"train", "disc_width", T::Int, "64", "Discriminator base width"},
      {"train", "no_attention", T::Bool, "false", "Drop the attention branch"},
      {"train", "no_style", T::Bool, "false", "Drop the style loss"},
      {"train", "no_line", T::Bool, "false", "Drop the line loss"},
      {"train", "no_cyc", T::Bool, "false", "Drop the cycle loss"},
      {"train", "saturating", T::Bool, "false", "Saturating generator adversarial loss"},
      {"train", "clip_norm", T::Float, "0", "Gradient norm clip (0 = off)"},
      {"train", "edge_extractor", T::Text, "hed", "Edge detector kind"},
      {"train", "perceptual_extractor", T::Text, "vgg16", "Perceptual extractor kind"},
      {"train", "hed_weights", T::Path, "", "Edge detector weight archive"},
      {"train", "vgg_weights", T::Path, "", "Perceptual extractor weight archive"},

      {"extract", "ckpt", T::Path, "", "Training checkpoint"},
      {"extract", "content", T::Path, "", "Color (or sketch) content image"},
      {"extract", "reference", T::Path, "", "Reference sketch"},
      {"extract", "out", T::Path, "", "Output PNG"},

      {"evaluate", "ckpt", T::Path, "", "Training checkpoint"},
      {"evaluate", "dataset", T::Path, "", "Root of the 25-shape four-style set"},
      {"evaluate", "out", T::Path, "report.json", "JSON report; a CSV is written beside it"},
      {"evaluate", "against", T::Text, "first-output", "Cyclic target: first-output or ground-truth"},
      {"evaluate", "fid_extractor", T::Text, "grid-pool", "FID feature backbone kind"},
      {"evaluate", "fid_weights", T::Path, "", "FID backbone weight archive"},
      {"evaluate", "lpips_extractor", T::Text, "vgg16", "LPIPS backbone kind"},
      {"evaluate", "lpips_weights", T::Path, "", "LPIPS backbone and channel weights"},

      {"embeddings", "encoder", T::Path, "", "Style encoder archive"},
      {"embeddings", "sketches", T::Path, "", "Manifest CSV (path,shape_id,style_id) or image directory"},
      {"embeddings", "out", T::Path, "embeddings.csv", "Output CSV"},
      {"embeddings", "resolution", T::Int, "256", "Encoder input side length"},

      {"synth", "shapes", T::Int, "8", "Distinct shapes"},
      {"synth", "size", T::Int, "64", "Image side length"},
      {"synth", "variants", T::Int, "1", "Jittered copies per (shape, style)"},
  };
  return specs;
}

std::vector<SettingSpec> section_specs(const std::string& section) {
  std::vector<SettingSpec> out;
  for (const auto& s : setting_specs()) {
    if (s.section == section) out.push_back(s);
  }
  return out;
}

std::string flag_name(const std::string& key) {
  std::string flag = "--" + key;
  for (auto& c : flag) {
    if (c == '_') c = '-';
  }
  return flag;
}

Settings::Settings() {
  for (const auto& s : setting_specs()) values_[s.section][s.key] = s.default_value;
}

void Settings::set(const std::string& section, const std::string& key, const std::string& value) {
  const auto* spec = find_spec(section, key);
  if (!spec) throw Error(ErrorKind::InvalidConfig, "unknown setting " + section + "." + key);
  values_[section][key] = canonical(*spec, value);
}

void Settings::merge_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorKind::MissingFile, "config file " + path.string() + " not found");
  }
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorKind::InvalidConfig, e.what());
  }
  for (const auto& [section, entries] : tree) {
    if (entries.empty()) {
      throw Error(ErrorKind::InvalidConfig,
                  path.string() + ": key '" + section + "' outside any [section]");
    }
    if (section_specs(section).empty()) {
      throw Error(ErrorKind::InvalidConfig, path.string() + ": unknown section [" + section + "]");
    }
    for (const auto& [key, value] : entries) set(section, key, value.data());
  }
}

const std::string& Settings::get(const std::string& section, const std::string& key) const {
  auto s = values_.find(section);
  if (s != values_.end()) {
    auto k = s->second.find(key);
    if (k != s->second.end()) return k->second;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown setting " + section + "." + key);
}

int64_t Settings::get_int(const std::string& section, const std::string& key) const {
  return std::stoll(get(section, key));
}

double Settings::get_double(const std::string& section, const std::string& key) const {
  const auto& v = get(section, key);
  double out = 0.0;
  std::from_chars(v.data(), v.data() + v.size(), out);
  return out;
}

bool Settings::get_bool(const std::string& section, const std::string& key) const {
  return get(section, key) == "true";
}

std::filesystem::path Settings::get_path(const std::string& section, const std::string& key) const {
  return get(section, key);
}

std::string Settings::dump() const {
  std::ostringstream out;
  for (const auto& [section, entries] : values_) {
    out << '[' << section << "]\n";
    for (const auto& [key, value] : entries) {
      const auto* spec = find_spec(section, key);
      const bool quoted = spec && (spec->type == T::Text || spec->type == T::Path);
      out << key << " = " << (quoted ? "\"" + value + "\"" : value) << '\n';
    }
    out << '\n';
  }
  // Fixed constants of the loss weighting and learning-rate schedule.
  out << "[schedule]\n"
      << "adv_weight = " << shortest(kAdversarialWeight) << '\n'
      << "cyc_weight = " << shortest(kCycleWeight) << '\n'
      << "line_weight = " << shortest(kStyleWeightStart) << " - " << shortest(kStyleWeightDrop)
      << " * epoch / epochs\n"
      << "lr_constant_fraction = 0.5\n"
      << "lr_decay = \"linear to zero\"\n"
      << "style_weight = " << shortest(kStyleWeightStart) << " - " << shortest(kStyleWeightDrop)
      << " * epoch / epochs\n";
  return out.str();
}

PretrainConfig Settings::pretrain_config() const {
  PretrainConfig c;
  c.epochs = static_cast<int>(get_int("pretrain", "epochs"));
  c.batch = static_cast<int>(get_int("pretrain", "batch"));
  c.lr = get_double("pretrain", "lr");
  c.margin = get_double("pretrain", "margin");
  c.resolution = get_int("pretrain", "resolution");
  c.width = get_int("pretrain", "width");
  c.seed = static_cast<uint64_t>(get_int("global", "seed"));
  const auto dir = get_path("global", "out_dir");
  const auto out = get_path("pretrain", "out");
  c.out = out.is_absolute() ? out : dir / out;
  c.log = dir / "pretrain_log.csv";
  return c;
}

TrainConfig Settings::train_config() const {
  TrainConfig c;
  c.epochs = static_cast<int>(get_int("train", "epochs"));
  c.batch = static_cast<int>(get_int("train", "batch"));
  c.lr = get_double("train", "lr");
  c.beta1 = get_double("train", "beta1");
  c.beta2 = get_double("train", "beta2");
  c.resolution = get_int("train", "resolution");
  c.width = get_int("train", "width");
  c.disc_width = get_int("train", "disc_width");
  c.seed = static_cast<uint64_t>(get_int("global", "seed"));
  c.ablation.no_attention = get_bool("train", "no_attention");
  c.ablation.no_style = get_bool("train", "no_style");
  c.ablation.no_line = get_bool("train", "no_line");
  c.ablation.no_cyc = get_bool("train", "no_cyc");
  c.saturating = get_bool("train", "saturating");
  c.clip_norm = get_double("train", "clip_norm");
  c.edge_extractor = get("train", "edge_extractor");
  c.perceptual_extractor = get("train", "perceptual_extractor");
  c.hed_weights = get_path("train", "hed_weights");
  c.vgg_weights = get_path("train", "vgg_weights");
  c.style_encoder = get_path("train", "style_encoder");
  c.out_dir = get_path("global", "out_dir");
  return c;
}

}  // namespace refsketch
