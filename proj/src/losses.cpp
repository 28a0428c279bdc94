#include "refsketch/losses.hpp"

#include <cmath>

#include "refsketch/errors.hpp"

namespace refsketch {

namespace {

namespace F = torch::nn::functional;

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": operand shapes differ");
  }
}

}  // namespace

LossWeights loss_weights(int epoch, int total_epochs) {
  if (total_epochs < 1 || epoch < 0 || epoch > total_epochs) {
    throw Error(ErrorKind::OutOfRangeEpoch, "epoch " + std::to_string(epoch) + " of " +
                                                std::to_string(total_epochs));
  }
  LossWeights w;
  w.style = kStyleWeightStart - kStyleWeightDrop * epoch / static_cast<double>(total_epochs);
  w.line = w.style;
  w.cyc = kCycleWeight;
  w.adv = kAdversarialWeight;
  return w;
}

double total_generator_loss(const LossTerms& t, const LossWeights& w) {
  for (double v : {t.style, t.line, t.cyc, t.adv_g}) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteTerm, "loss term is not finite");
  }
  return w.style * t.style + w.line * t.line + w.cyc * t.cyc + w.adv * t.adv_g;
}

torch::Tensor embedding_distance(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "embedding_distance");
  return (a - b).abs().mean();
}

torch::Tensor style_loss(const torch::Tensor& output, const torch::Tensor& reference,
                         StyleEncoder& encoder) {
  if (!is_frozen(*encoder)) {
    throw Error(ErrorKind::EncoderNotFrozen,
                "style loss needs a frozen encoder (eval mode, no trainable parameters)");
  }
  return embedding_distance(encoder->forward(output), encoder->forward(reference));
}

torch::Tensor line_loss(const torch::Tensor& color, const torch::Tensor& reconstructed,
                        const FeatureExtractor& edges, const FeatureExtractor& perceptual) {
  require_same_shape(color, reconstructed, "line_loss");
  auto edge_maps = [&](const torch::Tensor& image) {
    auto taps = edges.apply(image);
    if (taps.size() != 1) {
      throw Error(ErrorKind::ExtractorShapeMismatch, "edge extractor must expose one tap");
    }
    auto map = taps.front();
    if (perceptual.input_channels() == 3 && map.size(1) == 1) map = map.expand({-1, 3, -1, -1});
    if (perceptual.input_channels() != 0 && map.size(1) != perceptual.input_channels()) {
      throw Error(ErrorKind::ExtractorShapeMismatch,
                  "edge map channels do not match the perceptual extractor");
    }
    return map;
  };
  auto a = perceptual.apply(edge_maps(color));
  auto b = perceptual.apply(edge_maps(reconstructed));
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorKind::ExtractorShapeMismatch, "perceptual tap counts differ");
  }
  auto total = torch::zeros({}, color.options());
  for (size_t l = 0; l < a.size(); ++l) {
    if (a[l].sizes() != b[l].sizes()) {
      throw Error(ErrorKind::ExtractorShapeMismatch, "perceptual tap shapes differ");
    }
    total = total + (a[l] - b[l]).abs().mean();
  }
  return total;
}

torch::Tensor cycle_loss(const torch::Tensor& color, const torch::Tensor& reconstructed) {
  require_same_shape(color, reconstructed, "cycle_loss");
  return (color - reconstructed).abs().mean();
}

AdversarialLosses adversarial_from_logits(const torch::Tensor& real_logits,
                                          const torch::Tensor& fake_logits_detached,
                                          const torch::Tensor& fake_logits, bool saturating) {
  // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x).
  AdversarialLosses out;
  out.d_loss = F::softplus(-real_logits).mean() + F::softplus(fake_logits_detached).mean();
  out.g_loss = saturating ? -F::softplus(fake_logits).mean() : F::softplus(-fake_logits).mean();
  return out;
}

AdversarialLosses adversarial_losses(PatchDiscriminator& discriminator, const torch::Tensor& real,
                                     const torch::Tensor& fake, bool saturating) {
  require_same_shape(real, fake, "adversarial_losses");
  auto real_logits = discriminator->forward(real);
  auto fake_detached = discriminator->forward(fake.detach());
  auto fake_attached = discriminator->forward(fake);
  return adversarial_from_logits(real_logits, fake_detached, fake_attached, saturating);
}

}  // namespace refsketch
