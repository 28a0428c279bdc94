#include "../support/doctest_torch.hpp"

#include <fstream>

#include "refsketch/config.hpp"
#include "../support/test_support.hpp"

using namespace refsketch;
using testing::error_kind;
using testing::ScratchDir;

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("defaults") {
  Settings s;
  CHECK(s.get_int("train", "epochs") == 100);
  CHECK(s.get_int("train", "batch") == 4);
  CHECK(s.get_double("train", "lr") == 2e-4);
  CHECK(s.get_int("pretrain", "epochs") == 200);
  CHECK(s.get_double("pretrain", "margin") == 1.0);
  CHECK(s.get_int("curate", "k") == 10);
  CHECK(s.get_int("curate", "rounds") == 3);
  CHECK(s.get("evaluate", "against") == "first-output");
  auto t = s.train_config();
  CHECK(t.epochs == 100);
  CHECK(t.beta1 == 0.5);
  CHECK(t.resolution == 512);
  t.validate();
  auto p = s.pretrain_config();
  CHECK(p.epochs == 200);
  CHECK(p.batch == 4);
  CHECK(p.lr == 2e-4);
}

TEST_CASE("dump is canonical and carries the schedule constants") {
  Settings a, b;
  CHECK(a.dump() == b.dump());
  const auto text = a.dump();
  CHECK(text.find("[train]\n") != std::string::npos);
  CHECK(text.find("epochs = 100\n") != std::string::npos);
  CHECK(text.find("batch = 4\n") != std::string::npos);
  CHECK(text.find("lr = 0.0002\n") != std::string::npos);
  CHECK(text.find("cyc_weight = 10\n") != std::string::npos);
  CHECK(text.find("adv_weight = 1\n") != std::string::npos);
  CHECK(text.find("style_weight = 5 - 4.5 * epoch / epochs\n") != std::string::npos);
  CHECK(text.find("line_weight = 5 - 4.5 * epoch / epochs\n") != std::string::npos);
  CHECK(text.find("lr_constant_fraction = 0.5\n") != std::string::npos);
  // Sections appear in sorted order.
  CHECK(text.find("[curate]") < text.find("[global]"));
  CHECK(text.find("[global]") < text.find("[train]"));

  // Equivalent spellings canonicalise to the same dump.
  a.set("train", "lr", "2e-4");
  b.set("train", "lr", "0.00020");
  a.set("train", "no_cyc", "yes");
  b.set("train", "no_cyc", "true");
  CHECK(a.dump() == b.dump());
}

TEST_CASE("file values override defaults and flags override the file") {
  ScratchDir dir("config");
  write(dir / "cfg.toml",
        "[global]\nseed = 9\nout_dir = \"runs/x\"\n\n[train]\nepochs = 7\nbatch = 2\nno_style = true\n"
        "; comment\n");
  Settings s;
  s.merge_file(dir / "cfg.toml");
  CHECK(s.get_int("train", "epochs") == 7);
  CHECK(s.get_int("train", "batch") == 2);
  CHECK(s.get_bool("train", "no_style"));
  CHECK(s.get_path("global", "out_dir") == "runs/x");
  CHECK(s.train_config().seed == 9);
  CHECK(s.train_config().out_dir == "runs/x");
  s.set("train", "epochs", "1");
  CHECK(s.train_config().epochs == 1);
  CHECK(s.get_int("train", "batch") == 2);
  CHECK(s.pretrain_config().out == std::filesystem::path("runs/x") / "style_encoder.rska");
}

TEST_CASE("bad settings are rejected") {
  ScratchDir dir("badconfig");
  Settings s;
  CHECK(error_kind([&] { s.set("train", "epochz", "1"); }) == ErrorKind::InvalidConfig);
  CHECK(error_kind([&] { s.set("nowhere", "epochs", "1"); }) == ErrorKind::InvalidConfig);
  CHECK(error_kind([&] { s.set("train", "epochs", "ten"); }) == ErrorKind::InvalidConfig);
  CHECK(error_kind([&] { s.set("train", "epochs", "1.5"); }) == ErrorKind::InvalidConfig);
  CHECK(error_kind([&] { s.set("train", "lr", "fast"); }) == ErrorKind::InvalidConfig);
  CHECK(error_kind([&] { s.set("train", "no_style", "maybe"); }) == ErrorKind::InvalidConfig);
  CHECK(error_kind([&] { s.get("train", "nothing"); }) == ErrorKind::InvalidConfig);

  write(dir / "unknown_key.toml", "[train]\nlearning_rate = 1\n");
  CHECK(error_kind([&] { Settings().merge_file(dir / "unknown_key.toml"); }) == ErrorKind::InvalidConfig);
  write(dir / "unknown_section.toml", "[model]\nwidth = 1\n");
  CHECK(error_kind([&] { Settings().merge_file(dir / "unknown_section.toml"); }) == ErrorKind::InvalidConfig);
  write(dir / "bare.toml", "epochs = 3\n");
  CHECK(error_kind([&] { Settings().merge_file(dir / "bare.toml"); }) == ErrorKind::InvalidConfig);
  CHECK(error_kind([&] { Settings().merge_file(dir / "absent.toml"); }) == ErrorKind::MissingFile);
}

TEST_CASE("setting table") {
  CHECK(flag_name("out_dir") == "--out-dir");
  CHECK(flag_name("seed") == "--seed");
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& s : setting_specs()) {
    CHECK(seen.insert({s.section, s.key}).second);
    CHECK_FALSE(s.help.empty());
  }
  for (const auto* section : {"global", "pretrain", "curate", "train", "extract", "evaluate", "embeddings"}) {
    CHECK_FALSE(section_specs(section).empty());
  }
  for (const auto& key : {"seed", "device", "out_dir", "log_level"}) {
    bool found = false;
    for (const auto& s : section_specs("global")) found = found || s.key == key;
    CHECK(found);
  }
}
