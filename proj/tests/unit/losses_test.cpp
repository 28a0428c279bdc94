#include "../support/doctest_torch.hpp"

#include <cmath>

#include "refsketch/losses.hpp"
#include "../support/test_support.hpp"

using namespace refsketch;
using testing::error_kind;
using testing::grad_check;

namespace {

double scalar(const torch::Tensor& t) { return t.item<double>(); }

StyleEncoder frozen_encoder(torch::Dtype dtype = torch::kFloat32) {
  torch::manual_seed(11);
  StyleEncoder f(StyleEncoderOptions().width(4));
  f->to(dtype);
  freeze(*f);
  return f;
}

}  // namespace

TEST_CASE("loss weight schedule") {
  auto w0 = loss_weights(0, 100);
  CHECK(w0.style == 5.0);
  CHECK(w0.line == 5.0);
  CHECK(w0.cyc == 10.0);
  CHECK(w0.adv == 1.0);
  CHECK(loss_weights(100, 100).style == 0.5);
  CHECK(loss_weights(100, 100).line == 0.5);
  CHECK(loss_weights(50, 100).style == doctest::Approx(2.75));
  CHECK(loss_weights(7, 7).style == 0.5);
  CHECK(error_kind([] { loss_weights(101, 100); }) == ErrorKind::OutOfRangeEpoch);
  CHECK(error_kind([] { loss_weights(-1, 100); }) == ErrorKind::OutOfRangeEpoch);
  CHECK(error_kind([] { loss_weights(0, 0); }) == ErrorKind::OutOfRangeEpoch);

  // Affine in the epoch: equal steps give equal decrements, and cyc/adv never move.
  for (int n : {1, 3, 10, 200}) {
    for (int e = 0; e < n; ++e) {
      const auto a = loss_weights(e, n);
      const auto b = loss_weights(e + 1, n);
      CHECK(a.style - b.style == doctest::Approx(4.5 / n));
      CHECK(a.style == a.line);
      CHECK(b.cyc == 10.0);
      CHECK(b.adv == 1.0);
      CHECK(b.style >= 0.5);
      CHECK(a.style <= 5.0);
    }
  }
}

TEST_CASE("total generator loss") {
  CHECK(total_generator_loss({}, loss_weights(0, 100)) == 0.0);
  CHECK(total_generator_loss({1, 1, 1, 1}, loss_weights(0, 100)) == doctest::Approx(21.0));
  CHECK(total_generator_loss({1, 1, 1, 1}, loss_weights(100, 100)) == doctest::Approx(12.0));
  CHECK(total_generator_loss({0.5, 0.25, 0.1, 2.0}, {2.0, 3.0, 10.0, 1.0}) == doctest::Approx(1.0 + 0.75 + 1.0 + 2.0));
  CHECK(error_kind([] { total_generator_loss({NAN, 0, 0, 0}, {}); }) == ErrorKind::NonFiniteTerm);
  CHECK(error_kind([] { total_generator_loss({0, 0, INFINITY, 0}, {}); }) == ErrorKind::NonFiniteTerm);
}

TEST_CASE("style loss") {
  auto e1 = torch::full({1, 128}, 0.5);
  auto e2 = torch::full({1, 128}, 0.25);
  CHECK(scalar(embedding_distance(e1, e2)) == doctest::Approx(0.25));

  auto f = frozen_encoder();
  auto a = torch::rand({2, 1, 16, 16}) * 2 - 1;
  auto b = torch::rand({2, 1, 16, 16}) * 2 - 1;
  CHECK(scalar(style_loss(a, a.clone(), f)) == 0.0);
  CHECK(scalar(style_loss(a, b, f)) == doctest::Approx(scalar(style_loss(b, a, f))));
  CHECK(scalar(style_loss(a, b, f)) >= 0.0);

  StyleEncoder training(StyleEncoderOptions().width(4));
  CHECK(error_kind([&] { style_loss(a, b, training); }) == ErrorKind::EncoderNotFrozen);
  StyleEncoder eval_only(StyleEncoderOptions().width(4));
  eval_only->eval();
  CHECK(error_kind([&] { style_loss(a, b, eval_only); }) == ErrorKind::EncoderNotFrozen);
}

TEST_CASE("style loss reaches the output but never the encoder") {
  auto f = frozen_encoder();
  auto before = snapshot_state(*f);
  auto out = (torch::rand({2, 1, 16, 16}) * 2 - 1).requires_grad_(true);
  auto ref = torch::rand({2, 1, 16, 16}) * 2 - 1;
  for (int i = 0; i < 5; ++i) style_loss(out, ref, f).backward();
  CHECK(out.grad().abs().sum().item<double>() > 0.0);
  for (const auto& p : f->parameters()) CHECK_FALSE(p.grad().defined());
  CHECK(same_state(before, snapshot_state(*f)));
}

TEST_CASE("line loss") {
  IdentityExtractor id;
  auto a = torch::tensor({1.0, 1.0}).view({1, 1, 1, 2});
  auto b = torch::tensor({0.0, 1.0}).view({1, 1, 1, 2});
  CHECK(scalar(line_loss(a, b, id, id)) == doctest::Approx(0.5));
  CHECK(scalar(line_loss(a, a.clone(), id, id)) == 0.0);

  SobelEdgeExtractor sobel;
  CellMeanExtractor cells(4);
  torch::manual_seed(12);
  for (int i = 0; i < 20; ++i) {
    auto x = torch::rand({2, 3, 16, 16}) * 2 - 1;
    auto y = torch::rand({2, 3, 16, 16}) * 2 - 1;
    CHECK(scalar(line_loss(x, y, sobel, cells)) >= 0.0);
  }
  auto x = torch::rand({1, 3, 16, 16});
  CHECK(scalar(line_loss(x, x.clone(), sobel, cells)) == 0.0);
  CHECK(error_kind([&] { line_loss(x, torch::rand({1, 3, 8, 8}), sobel, cells); }) ==
        ErrorKind::ShapeMismatch);
}

namespace {

// Perceptual stub that insists on three channels, with two taps.
class ThreeChannelStub final : public FeatureExtractor {
 public:
  std::string name() const override { return "stub3"; }
  std::vector<std::string> taps() const override { return {"a", "b"}; }
  int64_t input_channels() const override { return 3; }
  std::vector<torch::Tensor> apply(const torch::Tensor& images) const override {
    REQUIRE(images.size(1) == 3);
    return {images, images * 2.0};
  }
};

class TwoTapEdges final : public FeatureExtractor {
 public:
  std::string name() const override { return "two"; }
  std::vector<std::string> taps() const override { return {"a", "b"}; }
  std::vector<torch::Tensor> apply(const torch::Tensor& images) const override { return {images, images}; }
};

}  // namespace

TEST_CASE("line loss replicates single-channel edges and sums taps") {
  IdentityExtractor id;
  ThreeChannelStub stub;
  auto a = torch::tensor({1.0, 1.0}).view({1, 1, 1, 2});
  auto b = torch::tensor({0.0, 1.0}).view({1, 1, 1, 2});
  // Two taps with the second doubled: 0.5 + 1.0.
  CHECK(scalar(line_loss(a, b, id, stub)) == doctest::Approx(1.5));
  TwoTapEdges two;
  CHECK(error_kind([&] { line_loss(a, b, two, id); }) == ErrorKind::ExtractorShapeMismatch);
  auto c = torch::zeros({1, 2, 1, 2});
  CHECK(error_kind([&] { line_loss(c, c, id, stub); }) == ErrorKind::ExtractorShapeMismatch);
}

TEST_CASE("cycle loss") {
  auto x = torch::rand({2, 3, 8, 8});
  CHECK(scalar(cycle_loss(x, x.clone())) == 0.0);
  CHECK(scalar(cycle_loss(torch::ones({1, 3, 4, 4}), -torch::ones({1, 3, 4, 4}))) == doctest::Approx(2.0));
  auto y = torch::zeros({1, 3, 4, 4});
  auto z = y.clone();
  z.slice(2, 0, 2).fill_(1.0);
  CHECK(scalar(cycle_loss(y, z)) == doctest::Approx(0.5));
  CHECK(error_kind([&] { cycle_loss(y, torch::zeros({1, 3, 4, 5})); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("adversarial objectives") {
  auto zero = torch::zeros({2, 1, 6, 6});
  auto at_zero = adversarial_from_logits(zero, zero, zero);
  CHECK(scalar(at_zero.d_loss) == doctest::Approx(2.0 * std::log(2.0)));
  CHECK(scalar(at_zero.g_loss) == doctest::Approx(std::log(2.0)));
  CHECK(scalar(adversarial_from_logits(zero, zero, zero, true).g_loss) == doctest::Approx(-std::log(2.0)));

  auto perfect = adversarial_from_logits(torch::full({1, 1, 4, 4}, 40.0), torch::full({1, 1, 4, 4}, -40.0),
                                         torch::full({1, 1, 4, 4}, -40.0));
  CHECK(scalar(perfect.d_loss) < 1e-12);
  CHECK(std::isfinite(scalar(perfect.g_loss)));

  double previous = INFINITY;
  for (double logit = -30.0; logit <= 30.0; logit += 0.5) {
    auto fake = torch::full({1, 1, 3, 3}, logit, torch::kFloat64);
    const double g = scalar(adversarial_from_logits(fake, fake, fake).g_loss);
    CHECK(g < previous);
    CHECK(g >= 0.0);
    previous = g;
  }

  // The detached input feeds only the D loss, the attached one only the G loss.
  auto real = torch::randn({1, 1, 4, 4});
  auto detached = torch::randn({1, 1, 4, 4}).requires_grad_(true);
  auto attached = torch::randn({1, 1, 4, 4}).requires_grad_(true);
  auto losses = adversarial_from_logits(real, detached, attached);
  losses.g_loss.backward();
  CHECK_FALSE(detached.grad().defined());
  CHECK(attached.grad().defined());
}

TEST_CASE("adversarial losses through the discriminator") {
  torch::manual_seed(13);
  PatchDiscriminator d(DiscriminatorOptions().width(2).resolution(32));
  auto real = torch::rand({2, 1, 32, 32}) * 2 - 1;
  auto fake = (torch::rand({2, 1, 32, 32}) * 2 - 1).requires_grad_(true);
  auto losses = adversarial_losses(d, real, fake);
  CHECK(scalar(losses.d_loss) > 0.0);
  losses.d_loss.backward();
  CHECK_FALSE(fake.grad().defined());
  losses.g_loss.backward();
  CHECK(fake.grad().abs().sum().item<double>() > 0.0);
  CHECK(error_kind([&] { adversarial_losses(d, real, torch::zeros({1, 1, 32, 32})); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("every loss is non-negative and zero on its identity case") {
  torch::manual_seed(14);
  auto f = frozen_encoder();
  SobelEdgeExtractor sobel;
  CellMeanExtractor cells(4);
  for (int i = 0; i < 50; ++i) {
    auto c = torch::rand({1, 3, 16, 16}) * 2 - 1;
    auto r = torch::rand({1, 3, 16, 16}) * 2 - 1;
    auto s = c.mean(1, true);
    auto t = r.mean(1, true);
    CHECK(scalar(cycle_loss(c, r)) >= 0.0);
    CHECK(scalar(line_loss(c, r, sobel, cells)) >= 0.0);
    CHECK(scalar(style_loss(s, t, f)) >= 0.0);
    CHECK(scalar(cycle_loss(c, c.clone())) == 0.0);
    CHECK(scalar(line_loss(c, c.clone(), sobel, cells)) == 0.0);
    CHECK(scalar(style_loss(s, s.clone(), f)) == 0.0);
  }
}

TEST_CASE("loss gradients match central differences") {
  torch::manual_seed(15);
  auto color = torch::rand({4, 3, 8, 8}, torch::kFloat64) * 2 - 1;
  auto recon = torch::rand({4, 3, 8, 8}, torch::kFloat64) * 2 - 1;

  auto cyc = grad_check([&](const torch::Tensor& x) { return cycle_loss(color, x); }, recon);
  CHECK(cyc.max_relative_error < 1e-3);

  SobelEdgeExtractor sobel;
  CellMeanExtractor cells(2);
  auto line = grad_check([&](const torch::Tensor& x) { return line_loss(color, x, sobel, cells); }, recon);
  CHECK(line.max_relative_error < 1e-3);

  auto f = frozen_encoder(torch::kFloat64);
  auto ref = torch::rand({4, 1, 8, 8}, torch::kFloat64) * 2 - 1;
  auto out = torch::rand({4, 1, 8, 8}, torch::kFloat64) * 2 - 1;
  auto style = grad_check([&](const torch::Tensor& x) { return style_loss(x, ref, f); }, out);
  CHECK(style.max_relative_error < 1e-3);

  torch::manual_seed(16);
  PatchDiscriminator d(DiscriminatorOptions().width(2).resolution(32));
  d->to(torch::kFloat64);
  auto real = torch::rand({4, 1, 32, 32}, torch::kFloat64) * 2 - 1;
  auto fake = torch::rand({4, 1, 32, 32}, torch::kFloat64) * 2 - 1;
  auto adv = grad_check([&](const torch::Tensor& x) { return adversarial_losses(d, real, x).g_loss; }, fake);
  CHECK(adv.max_relative_error < 1e-3);
}
