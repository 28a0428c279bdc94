#include "../support/doctest_torch.hpp"

#include <fstream>
#include <sstream>

#include "refsketch/archive.hpp"
#include "refsketch/style_pretrain.hpp"
#include "refsketch/synthetic.hpp"
#include "refsketch/training.hpp"
#include "../support/test_support.hpp"

using namespace refsketch;
using testing::error_kind;
using testing::ScratchDir;

namespace {

TrainConfig tiny_config(const std::filesystem::path& out = "unused") {
  TrainConfig c;
  c.epochs = 2;
  c.batch = 2;
  c.resolution = 32;
  c.width = 2;
  c.disc_width = 2;
  c.seed = 17;
  c.edge_extractor = "sobel";
  c.perceptual_extractor = "cell-mean";
  c.out_dir = out;
  return c;
}

FrozenNetworks tiny_frozen() {
  torch::manual_seed(99);
  FrozenNetworks f;
  f.style = StyleEncoder(StyleEncoderOptions().width(4));
  freeze(*f.style);
  f.edges = std::make_shared<SobelEdgeExtractor>();
  f.perceptual = std::make_shared<CellMeanExtractor>(4);
  return f;
}

std::pair<torch::Tensor, torch::Tensor> tiny_batch() {
  auto colors = torch::stack({testing::color_pattern(0, 32), testing::color_pattern(1, 32)});
  auto refs = torch::stack({render_synthetic_sketch(0, 1, 32), render_synthetic_sketch(1, 3, 32)});
  return {colors, refs};
}

void write_training_dirs(const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "color");
  std::filesystem::create_directories(root / "sketch");
  for (int i = 0; i < 4; ++i) {
    save_image(testing::color_pattern(i, 32), root / "color" / (std::to_string(i) + ".png"));
    save_image(render_synthetic_sketch(i, 1 + i % 4, 32), root / "sketch" / (std::to_string(i) + ".png"));
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  CHECK(lr_schedule(0) == 2e-4);
  CHECK(lr_schedule(49) == 2e-4);
  CHECK(lr_schedule(50) == 2e-4);
  CHECK(lr_schedule(75) == doctest::Approx(1e-4));
  CHECK(lr_schedule(100) == 0.0);
  CHECK(lr_schedule(60) > lr_schedule(61));
  CHECK(error_kind([] { lr_schedule(101); }) == ErrorKind::OutOfRange);
  CHECK(error_kind([] { lr_schedule(-1); }) == ErrorKind::OutOfRange);
}

TEST_CASE("training configuration") {
  TrainConfig d;
  CHECK(d.epochs == 100);
  CHECK(d.batch == 4);
  CHECK(d.lr == 2e-4);
  CHECK(d.beta1 == 0.5);
  CHECK(d.beta2 == 0.999);
  d.validate();

  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return error_kind([&] { c.validate(); });
  };
  CHECK(bad([](TrainConfig& c) { c.epochs = 0; }) == ErrorKind::InvalidConfig);
  CHECK(bad([](TrainConfig& c) { c.batch = 0; }) == ErrorKind::InvalidConfig);
  CHECK(bad([](TrainConfig& c) { c.lr = 0; }) == ErrorKind::InvalidConfig);
  CHECK(bad([](TrainConfig& c) { c.resolution = 40; }) == ErrorKind::InvalidConfig);
  CHECK(bad([](TrainConfig& c) { c.beta1 = 1.0; }) == ErrorKind::InvalidConfig);

  auto c = tiny_config("somewhere");
  c.ablation.no_cyc = true;
  c.clip_norm = 3.5;
  auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.ablation.no_cyc);
  CHECK(back.clip_norm == 3.5);
  CHECK(back.out_dir == "somewhere");
}

TEST_CASE("trainer preconditions") {
  auto c = tiny_config();
  FrozenNetworks none;
  CHECK(error_kind([&] { Trainer(c, none); }) == ErrorKind::UninitializedParams);
  auto f = tiny_frozen();
  StyleEncoder live(StyleEncoderOptions().width(4));
  f.style = live;
  CHECK(error_kind([&] { Trainer(c, f); }) == ErrorKind::EncoderNotFrozen);
  c.ablation.no_style = true;
  c.ablation.no_line = true;
  Trainer ok(c, FrozenNetworks{});
  CHECK(ok.config().ablation.no_style);
}

TEST_CASE("one step updates every trainable group and no frozen one") {
  auto f = tiny_frozen();
  auto style_before = snapshot_state(*f.style);
  Trainer t(tiny_config(), f);
  auto gs0 = snapshot_state(*t.sketch_generator());
  auto gc0 = snapshot_state(*t.color_generator());
  auto d0 = snapshot_state(*t.discriminator());
  auto [colors, refs] = tiny_batch();
  auto losses = t.train_step(colors, refs, loss_weights(0, 2), {.audit = true});
  CHECK(losses.style > 0.0);
  CHECK(losses.line > 0.0);
  CHECK(losses.cyc > 0.0);
  CHECK(losses.adv_d > 0.0);
  CHECK(losses.total_g == doctest::Approx(total_generator_loss(
                              {losses.style, losses.line, losses.cyc, losses.adv_g}, loss_weights(0, 2))));

  auto changed_groups = [](const auto& before, const auto& after, const std::vector<std::string>& groups) {
    int changed = 0;
    for (const auto& g : groups) {
      for (size_t i = 0; i < before.size(); ++i) {
        if (before[i].first.rfind(g, 0) == 0 && !torch::equal(before[i].second, after[i].second)) {
          ++changed;
          break;
        }
      }
    }
    return changed;
  };
  CHECK(changed_groups(gs0, snapshot_state(*t.sketch_generator()),
                       {"content_encoder", "reference_encoder", "spatial_attention", "channel_attention",
                        "resblocks", "decoder"}) == 6);
  CHECK(changed_groups(gc0, snapshot_state(*t.color_generator()), {"encoder", "resblocks", "decoder"}) == 3);
  CHECK(changed_groups(d0, snapshot_state(*t.discriminator()), {"body"}) == 1);
  CHECK(same_state(style_before, snapshot_state(*f.style)));
}

TEST_CASE("identical seeds give identical loss trajectories") {
  auto [colors, refs] = tiny_batch();
  std::vector<std::vector<double>> runs[2];
  for (auto& run : runs) {
    Trainer t(tiny_config(), tiny_frozen());
    for (int i = 0; i < 10; ++i) {
      auto l = t.train_step(colors, refs, loss_weights(0, 2));
      run.push_back({l.style, l.line, l.cyc, l.adv_g, l.adv_d, l.total_g});
    }
  }
  CHECK(runs[0] == runs[1]);
}

TEST_CASE("cycle-only ablation") {
  auto c = tiny_config();
  c.ablation = {true, true, true, false};
  Trainer t(c, FrozenNetworks{});
  CHECK_FALSE(t.sketch_generator()->spatial_attention);
  auto [colors, refs] = tiny_batch();
  LossWeights cyc_only{0.0, 0.0, 10.0, 0.0};
  double first = 0, last = 0;
  for (int i = 0; i < 15; ++i) {
    auto l = t.train_step(colors, refs, cyc_only);
    CHECK(l.style == 0.0);
    CHECK(l.line == 0.0);
    CHECK(l.total_g == doctest::Approx(10.0 * l.cyc));
    (i == 0 ? first : last) = l.cyc;
  }
  CHECK(last < first);
}

TEST_CASE("non-finite inputs abort the step") {
  Trainer t(tiny_config(), tiny_frozen());
  auto [colors, refs] = tiny_batch();
  std::vector<torch::Tensor> before;
  for (const auto& p : t.sketch_generator()->parameters()) before.push_back(p.detach().clone());
  colors[0][0][0][0] = NAN;
  CHECK(error_kind([&] { t.train_step(colors, refs, loss_weights(0, 2)); }) == ErrorKind::NonFiniteLoss);
  const auto after = t.sketch_generator()->parameters();
  bool untouched = true;
  for (size_t i = 0; i < before.size(); ++i) untouched = untouched && torch::equal(before[i], after[i]);
  CHECK(untouched);
  CHECK(error_kind([&] { t.train_step(colors.narrow(0, 0, 1), refs, loss_weights(0, 2)); }) ==
        ErrorKind::ShapeMismatch);
}

TEST_CASE("checkpoint round trip reproduces forward outputs bitwise") {
  ScratchDir dir("ckpt");
  Trainer t(tiny_config(), tiny_frozen());
  auto [colors, refs] = tiny_batch();
  t.train_step(colors, refs, loss_weights(0, 2));
  t.set_learning_rate(1.5e-4);
  t.save_checkpoint(dir / "a.ckpt", 3);

  auto probe = [&](Trainer& x) {
    torch::NoGradGuard g;
    x.sketch_generator()->eval();
    x.color_generator()->eval();
    auto o = x.sketch_generator()->forward(to_gray(colors), refs);
    return std::make_tuple(o, x.color_generator()->forward(o), x.discriminator()->forward(refs));
  };
  auto expected = probe(t);

  Trainer u(tiny_config(), tiny_frozen());
  CHECK(u.load_checkpoint(dir / "a.ckpt") == 3);
  CHECK(u.learning_rate() == 1.5e-4);
  auto got = probe(u);
  CHECK(torch::equal(std::get<0>(expected), std::get<0>(got)));
  CHECK(torch::equal(std::get<1>(expected), std::get<1>(got)));
  CHECK(torch::equal(std::get<2>(expected), std::get<2>(got)));

  auto model = load_sketch_model(dir / "a.ckpt");
  CHECK(model.epoch == 3);
  {
    torch::NoGradGuard g;
    CHECK(torch::equal(model.generator->forward(to_gray(colors), refs), std::get<0>(expected)));
  }

  auto archive = TensorArchive::load(dir / "a.ckpt");
  archive.metadata["format_version"] = kCheckpointFormatVersion + 1;
  archive.save(dir / "future.ckpt");
  CHECK(error_kind([&] { u.load_checkpoint(dir / "future.ckpt"); }) == ErrorKind::CheckpointVersionMismatch);
  CHECK(error_kind([&] { load_sketch_model(dir / "future.ckpt"); }) == ErrorKind::CheckpointVersionMismatch);
  CHECK(error_kind([&] { load_sketch_model(dir / "none.ckpt"); }) == ErrorKind::MissingFile);
}

TEST_CASE("training loop, logging and resume") {
  ScratchDir dir("train");
  write_training_dirs(dir.path());
  const TrainData data{dir / "color", dir / "sketch"};

  auto full_cfg = tiny_config(dir / "full");
  auto frozen = tiny_frozen();
  auto style_before = snapshot_state(*frozen.style);
  std::vector<StepRecord> records;
  auto full = train(full_cfg, data, frozen, std::nullopt, [&](const StepRecord& r) { records.push_back(r); });
  CHECK(full.epochs_completed == 2);
  CHECK(full.final_checkpoint == dir / "full" / "epoch_2.ckpt");
  CHECK(std::filesystem::exists(dir / "full" / "epoch_1.ckpt"));
  CHECK(std::filesystem::exists(dir / "full" / "config.json"));
  CHECK(same_state(style_before, snapshot_state(*frozen.style)));
  REQUIRE(records.size() == 4);
  for (const auto& r : records) {
    CHECK(r.weights.style == loss_weights(r.epoch, 2).style);
    CHECK(r.lr == lr_schedule(r.epoch, 2, full_cfg.lr));
  }

  auto lines = read_lines(dir / "full" / "losses.csv");
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] ==
        "epoch,step,lr,lambda_style,lambda_line,lambda_cyc,lambda_adv,style,line,cyc,adv_g,adv_d,total_g");

  // Stop after one epoch, then resume: the second epoch must match the uninterrupted run.
  auto half_cfg = tiny_config(dir / "half");
  half_cfg.epochs = 1;
  train(half_cfg, data, tiny_frozen());
  auto resumed_cfg = tiny_config(dir / "half");
  auto resumed = train(resumed_cfg, data, tiny_frozen(), dir / "half" / "epoch_1.ckpt");
  CHECK(resumed.epochs_completed == 2);
  auto resumed_lines = read_lines(dir / "half" / "losses.csv");
  REQUIRE(resumed_lines.size() == 5);
  // Epoch 0 rows were written under a 1-epoch schedule, so only epoch 1 is comparable.
  CHECK(resumed_lines[3] == lines[3]);
  CHECK(resumed_lines[4] == lines[4]);
}

TEST_CASE("extraction") {
  ScratchDir dir("extract");
  Trainer t(tiny_config(), tiny_frozen());
  t.save_checkpoint(dir / "m.ckpt", 0);
  save_image(testing::color_pattern(2, 48), dir / "content.png");
  save_image(render_synthetic_sketch(2, 2, 40), dir / "ref.png");
  auto a = extract(dir / "m.ckpt", dir / "content.png", dir / "ref.png", dir / "a.png");
  auto b = extract(dir / "m.ckpt", dir / "content.png", dir / "ref.png", dir / "b.png");
  CHECK(a.height() == 32);
  CHECK(a.width() == 32);
  auto bytes = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  };
  CHECK(bytes(dir / "a.png") == bytes(dir / "b.png"));
  CHECK(load_sketch(dir / "a.png").height() == 32);

  // A sketch used as content skips the luminance conversion.
  auto model = load_sketch_model(dir / "m.ckpt");
  auto sketch = render_synthetic_sketch(3, 1, 32);
  auto direct = extract_sketch(model.generator, sketch, SketchImage(render_synthetic_sketch(2, 2, 32)));
  auto via_rgb = extract_sketch(model.generator, sketch.expand({3, -1, -1}).contiguous(),
                                SketchImage(render_synthetic_sketch(2, 2, 32)));
  CHECK(torch::allclose(direct.data(), via_rgb.data(), 1e-5, 1e-5));
  save_image(sketch, dir / "sketch_content.png");
  auto from_file = extract(dir / "m.ckpt", dir / "sketch_content.png", dir / "ref.png", dir / "c.png");
  CHECK(from_file.height() == 32);
  CHECK(error_kind([&] { extract(dir / "m.ckpt", dir / "nope.png", dir / "ref.png", dir / "d.png"); }) ==
        ErrorKind::MissingFile);
}
