// Command-line entry point. Exit status: 0 success, 1 domain error, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "refsketch/config.hpp"
#include "refsketch/curation.hpp"
#include "refsketch/errors.hpp"
#include "refsketch/evaluation.hpp"
#include "refsketch/logging.hpp"
#include "refsketch/style_pretrain.hpp"
#include "refsketch/synthetic.hpp"
#include "refsketch/training.hpp"

namespace fs = std::filesystem;
using namespace refsketch;

namespace {

struct BoundFlag {
  std::string section;
  std::string key;
  CLI::Option* option = nullptr;
  std::string text;
  bool is_bool = false;
  bool flag = false;
};

// Flag storage must not move once CLI11 holds references to it.
struct FlagTable {
  std::vector<std::unique_ptr<BoundFlag>> flags;

  void bind_section(CLI::App* app, const std::string& section, bool hide_global = true) {
    for (const auto& spec : section_specs(section)) {
      if (hide_global && section == "global") continue;
      auto bound = std::make_unique<BoundFlag>();
      bound->section = spec.section;
      bound->key = spec.key;
      bound->is_bool = spec.type == SettingType::Bool;
      if (spec.type == SettingType::Bool) {
        bound->option = app->add_flag(flag_name(spec.key), bound->flag, spec.help);
      } else {
        bound->option = app->add_option(flag_name(spec.key), bound->text, spec.help);
      }
      flags.push_back(std::move(bound));
    }
  }

  void apply(Settings& settings) const {
    for (const auto& f : flags) {
      if (f->option->count() == 0) continue;
      settings.set(f->section, f->key, f->is_bool ? (f->flag ? "true" : "false") : f->text);
    }
  }
};

struct Globals {
  std::string config;
  std::string seed, device, out_dir, log_level;
  CLI::Option *seed_opt = nullptr, *device_opt = nullptr, *out_opt = nullptr, *log_opt = nullptr;
};

Settings resolve(const Globals& g, const FlagTable& table) {
  Settings settings;
  if (!g.config.empty()) settings.merge_file(g.config);
  if (g.seed_opt->count()) settings.set("global", "seed", g.seed);
  if (g.device_opt->count()) settings.set("global", "device", g.device);
  if (g.out_opt->count()) settings.set("global", "out_dir", g.out_dir);
  if (g.log_opt->count()) settings.set("global", "log_level", g.log_level);
  table.apply(settings);
  if (settings.get("global", "device") != "cpu") {
    throw Error(ErrorKind::InvalidConfig, "only --device cpu is supported");
  }
  log::set_level(log::parse_level(settings.get("global", "log_level")));
  return settings;
}

fs::path out_dir(const Settings& s) { return s.get_path("global", "out_dir"); }

fs::path output_path(const Settings& s, const fs::path& p) {
  return p.is_absolute() ? p : out_dir(s) / p;
}

fs::path require_path(const Settings& s, const std::string& section, const std::string& key) {
  auto p = s.get_path(section, key);
  if (p.empty()) throw CLI::RequiredError(flag_name(key));
  if (!fs::exists(p)) throw Error(ErrorKind::MissingFile, flag_name(key) + " " + p.string() + " not found");
  return p;
}

fs::path require_value(const Settings& s, const std::string& section, const std::string& key) {
  auto p = s.get_path(section, key);
  if (p.empty()) throw CLI::RequiredError(flag_name(key));
  return p;
}

ExtractorPtr backbone(const Settings& s) {
  const auto kind = s.get("curate", "extractor");
  const auto weights = s.get_path("curate", "weights");
  if ((kind == "vgg16" || kind == "hed") && weights.empty()) {
    log::warn("curation backbone '", kind, "' has no weights; using grid-pool features");
    return make_extractor("grid-pool");
  }
  return make_extractor(kind, weights);
}

std::set<int> parse_labels(const std::string& text) {
  std::set<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      out.insert(std::stoi(item));
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidConfig, "--keep expects comma-separated labels, got '" + text + "'");
    }
  }
  return out;
}

void write_lines(const fs::path& path, const std::vector<fs::path>& items) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IOError, "cannot write " + path.string());
  for (const auto& p : items) out << p.string() << '\n';
}

int run_pretrain(const Settings& s) {
  auto manifest = require_path(s, "pretrain", "corpus");
  auto corpus = StyleCorpus::load_manifest(manifest);
  auto config = s.pretrain_config();
  fs::create_directories(out_dir(s));
  pretrain_style_encoder(corpus, config, [&](int epoch, double loss) {
    log::info("pretrain epoch ", epoch + 1, "/", config.epochs, " triplet loss ", loss);
  });
  log::info("style encoder written to ", config.out.string());
  return 0;
}

int run_cull(const Settings& s) {
  const auto images_dir = require_path(s, "curate", "images");
  const auto images = list_images(images_dir);
  const auto dir = out_dir(s);
  fs::create_directories(dir);
  const auto state_path = dir / "cull_state.json";

  nlohmann::json state = {{"images", fs::absolute(images_dir).string()},
                          {"keeps", nlohmann::json::array()}};
  if (fs::exists(state_path)) {
    std::ifstream in(state_path);
    state = nlohmann::json::parse(in);
    if (state.value("images", "") != fs::absolute(images_dir).string()) {
      throw Error(ErrorKind::InvalidConfig, state_path.string() + " belongs to another image set");
    }
  }
  std::vector<std::set<int>> keeps;
  for (const auto& k : state["keeps"]) keeps.push_back(k.get<std::set<int>>());

  const int rounds = static_cast<int>(s.get_int("curate", "rounds"));
  const auto keep_text = s.get("curate", "keep");
  if (!keep_text.empty()) {
    if (static_cast<int>(keeps.size()) >= rounds) {
      throw Error(ErrorKind::InvalidConfig, "all " + std::to_string(rounds) + " rounds already reviewed");
    }
    keeps.push_back(parse_labels(keep_text));
    state["keeps"].push_back(keeps.back());
  }

  auto features = extract_cluster_features(images, *backbone(s), s.get_int("curate", "input_size"));
  CullOptions options;
  options.k = static_cast<int>(s.get_int("curate", "k"));
  options.max_iter = static_cast<int>(s.get_int("curate", "max_iter"));
  options.seed = static_cast<uint64_t>(s.get_int("global", "seed"));
  const bool finished = static_cast<int>(keeps.size()) >= rounds;
  options.rounds = finished ? rounds : static_cast<int>(keeps.size()) + 1;
  auto result = cull_improper(features, options,
                              [&](int round, const ClusterAssignment& clusters, const std::vector<size_t>&) {
                                if (round < static_cast<int>(keeps.size())) return keeps[round];
                                std::set<int> all;
                                for (int k = 0; k < static_cast<int>(clusters.centroids.size()); ++k) all.insert(k);
                                return all;
                              });

  std::vector<fs::path> kept;
  for (auto i : result.kept) kept.push_back(images[i]);
  write_lines(dir / "kept.txt", kept);
  {
    std::ofstream out(state_path);
    out << state.dump(2) << '\n';
  }
  if (finished) {
    log::info("culling complete: ", kept.size(), " of ", images.size(), " kept (", (dir / "kept.txt").string(), ")");
    return 0;
  }
  const int round = static_cast<int>(keeps.size());
  const auto& clusters = result.rounds.back();
  std::vector<fs::path> alive;
  for (auto i : result.members.back()) alive.push_back(images[i]);
  const auto prefix = "round" + std::to_string(round);
  write_contact_sheets(alive, clusters.labels, dir, prefix);
  write_cluster_manifest(alive, clusters.labels, dir / (prefix + "_clusters.csv"));
  log::info("round ", round + 1, "/", rounds, ": review ", prefix,
            "_cluster<k>.png, then rerun with --keep <labels>");
  return 0;
}

int run_styles(const Settings& s) {
  const auto images = list_images(require_path(s, "curate", "images"));
  auto features = extract_cluster_features(images, *backbone(s), s.get_int("curate", "input_size"));
  auto clusters = identify_styles(features, static_cast<int>(s.get_int("curate", "styles")),
                                  static_cast<uint64_t>(s.get_int("global", "seed")),
                                  static_cast<int>(s.get_int("curate", "max_iter")));
  const auto dir = out_dir(s);
  fs::create_directories(dir);
  write_contact_sheets(images, clusters.labels, dir, "styles");
  write_cluster_manifest(images, clusters.labels, dir / "styles.csv");
  log::info("style clusters written to ", (dir / "styles.csv").string());
  return 0;
}

int run_train(const Settings& s) {
  TrainData data{require_path(s, "train", "color_dir"), require_path(s, "train", "sketch_dir")};
  auto config = s.train_config();
  config.validate();
  if (!config.ablation.no_style) require_path(s, "train", "style_encoder");
  std::optional<fs::path> resume;
  if (!s.get_path("train", "resume").empty()) resume = require_path(s, "train", "resume");
  auto frozen = make_frozen_networks(config);
  auto result = train(config, data, std::move(frozen), resume);
  log::info("training finished after ", result.epochs_completed, " epochs: ",
            result.final_checkpoint.string());
  return 0;
}

int run_extract(const Settings& s) {
  auto ckpt = require_path(s, "extract", "ckpt");
  auto content = require_path(s, "extract", "content");
  auto reference = require_path(s, "extract", "reference");
  auto out = output_path(s, require_value(s, "extract", "out"));
  extract(ckpt, content, reference, out);
  log::info("wrote ", out.string());
  return 0;
}

EvalBackbones eval_backbones(const Settings& s) {
  return make_backbones(s.get("evaluate", "fid_extractor"), s.get_path("evaluate", "fid_weights"),
                        s.get("evaluate", "lpips_extractor"), s.get_path("evaluate", "lpips_weights"));
}

void write_report(const Settings& s, const MetricReport& report) {
  auto out = output_path(s, require_value(s, "evaluate", "out"));
  report.write_json(out);
  auto csv = out;
  csv.replace_extension(".csv");
  report.write_csv(csv);
  for (const auto& section : report.sections) {
    log::info(section.name, ": PSNR ", section.aggregate.psnr, " LPIPS ", section.aggregate.lpips,
              " FID ", section.aggregate.fid, " over ", section.aggregate.n, " pairs");
  }
  log::info("report written to ", out.string(), " and ", csv.string());
}

int run_evaluate(const Settings& s) {
  auto ckpt = require_path(s, "evaluate", "ckpt");
  auto dataset = require_path(s, "evaluate", "dataset");
  index_4skst(dataset);
  write_report(s, evaluate_extraction(ckpt, dataset, eval_backbones(s)));
  return 0;
}

int run_cyclic(const Settings& s) {
  auto ckpt = require_path(s, "evaluate", "ckpt");
  auto dataset = require_path(s, "evaluate", "dataset");
  auto against = parse_cyclic_target(s.get("evaluate", "against"));
  index_4skst(dataset);
  write_report(s, cyclic_evaluate(ckpt, dataset, eval_backbones(s), against));
  return 0;
}

int run_embeddings(const Settings& s) {
  auto encoder = load_style_encoder(require_path(s, "embeddings", "encoder"));
  auto source = require_path(s, "embeddings", "sketches");
  std::vector<CorpusEntry> sketches;
  if (fs::is_directory(source)) {
    for (const auto& p : list_images(source)) sketches.push_back({p, "", ""});
  } else {
    sketches = StyleCorpus::load_manifest(source).entries();
  }
  auto out = output_path(s, require_value(s, "embeddings", "out"));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_embeddings_csv(compute_embeddings(encoder, sketches, s.get_int("embeddings", "resolution")), out);
  log::info(sketches.size(), " embeddings written to ", out.string());
  return 0;
}

int run_synth(const Settings& s) {
  auto corpus = write_synthetic_corpus(out_dir(s), static_cast<int>(s.get_int("synth", "shapes")),
                                       s.get_int("synth", "size"),
                                       static_cast<uint64_t>(s.get_int("global", "seed")),
                                       static_cast<int>(s.get_int("synth", "variants")));
  log::info(corpus.size(), " sketches and manifest.csv written to ", out_dir(s).string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-based sketch extraction: style pretraining, curation, training, "
               "extraction and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Globals g;
  app.add_option("--config", g.config, "Settings file with [section] key = value entries");
  g.seed_opt = app.add_option("--seed", g.seed, "Seed for every random stream");
  g.device_opt = app.add_option("--device", g.device, "Compute device (cpu)");
  g.out_opt = app.add_option("--out-dir", g.out_dir, "Directory for written artifacts");
  g.log_opt = app.add_option("--log-level", g.log_level, "debug, info, warn, error or off");

  std::map<CLI::App*, FlagTable> tables;
  std::map<CLI::App*, std::function<int(const Settings&)>> actions;
  auto add = [&](CLI::App* parent, const std::string& name, const std::string& help,
                 const std::vector<std::string>& sections, std::function<int(const Settings&)> fn) {
    auto* sub = parent->add_subcommand(name, help);
    for (const auto& section : sections) tables[sub].bind_section(sub, section);
    actions[sub] = std::move(fn);
    return sub;
  };

  add(&app, "pretrain-style", "Train the style encoder with a triplet objective", {"pretrain"}, run_pretrain);
  auto* curate = app.add_subcommand("curate", "Cluster-based corpus curation");
  curate->require_subcommand(1);
  add(curate, "cull", "One review round of cluster-based culling", {"curate"}, run_cull);
  add(curate, "styles", "Cluster a curated sketch corpus into styles", {"curate"}, run_styles);
  add(&app, "train", "Adversarial training of the sketch generator", {"train"}, run_train);
  add(&app, "extract", "Extract one sketch with a trained checkpoint", {"extract"}, run_extract);
  add(&app, "evaluate", "Same-style, unseen-reference evaluation", {"evaluate"}, run_evaluate);
  add(&app, "cyclic-eval", "Re-extract with the first output as reference", {"evaluate"}, run_cyclic);
  add(&app, "export-embeddings", "Write style embeddings as CSV", {"embeddings"}, run_embeddings);
  add(&app, "synth-corpus", "Render the procedural four-style sketch corpus", {"synth"}, run_synth);

  auto* dump = app.add_subcommand("config-dump", "Print every effective setting");
  actions[dump] = [](const Settings& s) {
    std::cout << s.dump();
    return 0;
  };
  for (const auto* section : {"pretrain", "curate", "train", "extract", "evaluate", "embeddings", "synth"}) {
    auto* sub = dump->add_subcommand(section, std::string("Override [") + section + "] settings");
    tables[sub].bind_section(sub, section);
    actions[sub] = actions[dump];
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  // The deepest selected subcommand owns the action.
  CLI::App* selected = &app;
  while (!selected->get_subcommands().empty()) selected = selected->get_subcommands().front();

  try {
    FlagTable empty;
    const auto& table = tables.count(selected) ? tables.at(selected) : empty;
    auto settings = resolve(g, table);
    return actions.at(selected)(settings);
  } catch (const CLI::RequiredError& e) {
    std::cerr << selected->get_name() << ": " << e.what() << '\n' << selected->help();
    return 2;
  } catch (const Error& e) {
    log::error(e.what());
    return 1;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
}
