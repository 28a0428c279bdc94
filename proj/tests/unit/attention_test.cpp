#include "../support/doctest_torch.hpp"

#include "refsketch/attention.hpp"
#include "../support/test_support.hpp"

using namespace refsketch;
using testing::error_kind;

namespace {

void zero_parameters(torch::nn::Module& m) {
  torch::NoGradGuard g;
  for (auto& p : m.parameters()) p.zero_();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("spatial attention with zero weights is one half everywhere") {
  SpatialAttention sa;
  zero_parameters(*sa);
  auto out = sa->forward(torch::randn({1, 512, 64, 64}));
  CHECK(out.sizes() == torch::IntArrayRef({1, 1, 64, 64}));
  CHECK(out.eq(0.5).all().item<bool>());
}

TEST_CASE("spatial attention hand-evaluated center tap") {
  SpatialAttention sa;
  {
    torch::NoGradGuard g;
    sa->conv->weight.zero_();
    sa->conv->weight.index_put_({0, torch::indexing::Slice(), 1, 1}, 1.0);
    sa->conv->bias.zero_();
  }
  auto x = torch::tensor({3.0f, -1.0f}).view({1, 2, 1, 1});
  // avg = 1, max = 3, logit 4.
  CHECK(sa->forward(x).item<float>() == doctest::Approx(sigmoid(4.0)).epsilon(1e-6));
  CHECK(sigmoid(4.0) == doctest::Approx(0.98201).epsilon(1e-5));
}

TEST_CASE("spatial map responds only within its 3x3 neighbourhood") {
  torch::manual_seed(1);
  SpatialAttention sa;
  torch::NoGradGuard g;
  auto x = torch::randn({1, 4, 9, 9});
  auto base = sa->forward(x);
  auto y = x.clone();
  y[0][2][4][4] += 10.0;
  auto changed = sa->forward(y).ne(base).squeeze();
  CHECK(changed.slice(0, 3, 6).slice(1, 3, 6).any().item<bool>());
  auto outside = changed.clone();
  outside.slice(0, 3, 6).slice(1, 3, 6).fill_(false);
  CHECK_FALSE(outside.any().item<bool>());
}

TEST_CASE("channel attention shapes and zero weights") {
  ChannelAttention ca(ChannelAttentionOptions(512));
  CHECK(ca->hidden_width() == 32);
  CHECK(ca->squeeze->weight.sizes() == torch::IntArrayRef({32, 512}));
  CHECK(ca->expand->weight.sizes() == torch::IntArrayRef({512, 32}));
  auto x = torch::randn({2, 512, 5, 7});
  auto out = ca->forward(x);
  CHECK(out.sizes() == torch::IntArrayRef({2, 512, 1, 1}));
  CHECK(out.gt(0).all().item<bool>());
  CHECK(out.lt(1).all().item<bool>());
  zero_parameters(*ca);
  CHECK(ca->forward(x).eq(0.5).all().item<bool>());
}

TEST_CASE("channel attention hand-evaluated two-layer sum") {
  ChannelAttention ca(ChannelAttentionOptions(2).reduction(2).activation(HiddenActivation::Identity));
  {
    torch::NoGradGuard g;
    ca->squeeze->weight.fill_(1.0);
    ca->squeeze->bias.zero_();
    ca->expand->weight.fill_(1.0);
    ca->expand->bias.zero_();
  }
  auto x = torch::stack({torch::full({3, 3}, 1.0f), torch::full({3, 3}, 3.0f)}).unsqueeze(0);
  auto logits = ca->logits(x).flatten();
  CHECK(logits[0].item<float>() == doctest::Approx(8.0));
  CHECK(logits[1].item<float>() == doctest::Approx(8.0));
  CHECK(ca->forward(x).flatten()[1].item<float>() == doctest::Approx(sigmoid(8.0)));
}

TEST_CASE("channel count must divide by the reduction") {
  CHECK(error_kind([] { ChannelAttention(ChannelAttentionOptions(24)); }) == ErrorKind::ReductionMismatch);
}

TEST_CASE("adain of a map with itself is the identity up to epsilon") {
  torch::manual_seed(2);
  auto x = torch::randn({2, 8, 12, 12}) * 2.0 + 0.5;
  auto out = adain(x, x);
  auto [mean, std] = channel_moments(x);
  // Exact result is mean + std * z * std / (std + eps), i.e. off by eps * |z|.
  auto z = ((x - mean) / std).abs();
  CHECK(((out - x).abs() - 1e-5 * torch::clamp_min(z, 1.0)).max().item<float>() <= 1e-5);
}

TEST_CASE("adain matches the hand-computed channel") {
  auto content = torch::tensor({1.0, 2.0, 3.0}, torch::kFloat64).view({1, 1, 1, 3});
  auto style = torch::tensor({0.0, 10.0, 20.0}, torch::kFloat64).view({1, 1, 1, 3});
  auto out = adain(content, style).flatten();
  CHECK(out[0].item<double>() == doctest::Approx(0.0).epsilon(1e-3).scale(1));
  CHECK(out[1].item<double>() == doctest::Approx(10.0).epsilon(1e-4));
  CHECK(out[2].item<double>() == doctest::Approx(20.0).epsilon(1e-4));
}

TEST_CASE("adain degenerate channels stay finite") {
  auto content = torch::full({1, 2, 4, 4}, 0.7, torch::kFloat64).requires_grad_(true);
  auto style = torch::randn({1, 2, 6, 6}, torch::kFloat64);
  auto out = adain(content, style);
  auto [ms, ss] = channel_moments(style);
  CHECK(torch::allclose(out, ms.expand_as(out)));
  out.sum().backward();
  CHECK(torch::isfinite(content.grad()).all().item<bool>());
  auto flat = torch::zeros({1, 2, 4, 4}, torch::kFloat64).requires_grad_(true);
  adain(torch::randn({1, 2, 4, 4}, torch::kFloat64), flat).pow(2).sum().backward();
  CHECK(torch::isfinite(flat.grad()).all().item<bool>());
}

TEST_CASE("adain shape rules") {
  CHECK(error_kind([] { adain(torch::randn({1, 3, 4, 4}), torch::randn({1, 4, 4, 4})); }) ==
        ErrorKind::ChannelMismatch);
  CHECK(adain(torch::randn({1, 3, 4, 4}), torch::randn({1, 3, 9, 2})).sizes() ==
        torch::IntArrayRef({1, 3, 4, 4}));
}

TEST_CASE("attended fusion with zeroed attention halves both inputs") {
  torch::manual_seed(4);
  SpatialAttention sa;
  ChannelAttention ca(ChannelAttentionOptions(32));
  zero_parameters(*sa);
  zero_parameters(*ca);
  auto c = torch::randn({1, 32, 8, 8});
  auto s = torch::randn({1, 32, 6, 6});
  auto fused = attended_fusion(c, s, sa, ca);
  CHECK(fused.sizes() == c.sizes());
  CHECK(torch::allclose(fused, adain(0.5 * c, 0.5 * s), 1e-5, 1e-5));
}

TEST_CASE("fusion with unit gates on identical maps is the identity") {
  torch::manual_seed(5);
  auto c = torch::randn({1, 16, 8, 8});
  auto out = fuse_with_gates(c, torch::ones({1, 1, 8, 8}), c, torch::ones({1, 16, 1, 1}));
  auto [mean, std] = channel_moments(c);
  auto z = ((c - mean) / std).abs();
  CHECK(((out - c).abs() - 1e-5 * torch::clamp_min(z, 1.0)).max().item<float>() <= 1e-5);
}

TEST_CASE("attention and adain gradients match finite differences") {
  torch::manual_seed(6);
  const auto f64 = torch::kFloat64;
  SpatialAttention sa;
  sa->to(f64);
  ChannelAttention ca(ChannelAttentionOptions(4).reduction(2));
  ca->to(f64);
  auto weights = torch::randn({1, 4, 6, 6}, f64);
  auto r1 = testing::grad_check([&](const torch::Tensor& x) { return (sa->forward(x) * weights.sum(1, true)).sum(); },
                                torch::randn({1, 4, 6, 6}, f64), 40);
  auto r2 = testing::grad_check([&](const torch::Tensor& x) { return (ca->forward(x).flatten() * torch::arange(4, f64)).sum(); },
                                torch::randn({1, 4, 6, 6}, f64), 40);
  auto style = torch::randn({1, 4, 6, 6}, f64);
  auto r3 = testing::grad_check([&](const torch::Tensor& x) { return (adain(x, style) * weights).sum(); },
                                torch::randn({1, 4, 6, 6}, f64), 40);
  CHECK(r1.max_relative_error < 1e-3);
  CHECK(r2.max_relative_error < 1e-3);
  CHECK(r3.max_relative_error < 1e-3);
}
