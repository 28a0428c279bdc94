#pragma once

// Generator/discriminator objectives and the epoch-dependent weighting.
//
//   total_g = w_style * L_style + w_line * L_line + w_cyc * L_cyc + w_adv * L_adv
//   w_style = w_line = 5 - 4.5 * epoch / total_epochs, w_cyc = 10, w_adv = 1

#include <torch/torch.h>

#include "refsketch/extractors.hpp"
#include "refsketch/networks.hpp"

namespace refsketch {

inline constexpr double kStyleWeightStart = 5.0;
inline constexpr double kStyleWeightDrop = 4.5;
inline constexpr double kCycleWeight = 10.0;
inline constexpr double kAdversarialWeight = 1.0;

struct LossWeights {
  double style = kStyleWeightStart;
  double line = kStyleWeightStart;
  double cyc = kCycleWeight;
  double adv = kAdversarialWeight;
};

/// Generator-side loss values, unweighted.
struct LossTerms {
  double style = 0.0;
  double line = 0.0;
  double cyc = 0.0;
  double adv_g = 0.0;
};

struct LossBreakdown {
  double style = 0.0;
  double line = 0.0;
  double cyc = 0.0;
  double adv_g = 0.0;
  double adv_d = 0.0;
  double total_g = 0.0;
};

LossWeights loss_weights(int epoch, int total_epochs);

/// Weighted sum; throws NonFiniteTerm when any term is NaN or infinite.
double total_generator_loss(const LossTerms& terms, const LossWeights& weights);

/// Mean absolute difference of two embedding batches (N×128).
torch::Tensor embedding_distance(const torch::Tensor& a, const torch::Tensor& b);

/// L1 distance between frozen style embeddings of output and reference
/// sketches. Rejects an encoder that is in training mode or has trainable
/// parameters (EncoderNotFrozen).
torch::Tensor style_loss(const torch::Tensor& output, const torch::Tensor& reference,
                         StyleEncoder& encoder);

/// Sum over perceptual taps of mean |phi(edges(color)) - phi(edges(recon))|.
/// Single-channel edge maps are replicated when `perceptual` wants three.
torch::Tensor line_loss(const torch::Tensor& color, const torch::Tensor& reconstructed,
                        const FeatureExtractor& edges, const FeatureExtractor& perceptual);

/// Mean absolute pixel difference.
torch::Tensor cycle_loss(const torch::Tensor& color, const torch::Tensor& reconstructed);

struct AdversarialLosses {
  torch::Tensor d_loss;
  torch::Tensor g_loss;
};

/// Cross-entropy objectives from logit grids averaged over the patch grid:
///   d = -mean log sigmoid(real) - mean log(1 - sigmoid(fake))
///   g = -mean log sigmoid(fake)             (non-saturating, default)
///   g =  mean log(1 - sigmoid(fake))        (saturating)
/// `fake_logits_detached` feeds d; `fake_logits` feeds g.
AdversarialLosses adversarial_from_logits(const torch::Tensor& real_logits,
                                          const torch::Tensor& fake_logits_detached,
                                          const torch::Tensor& fake_logits,
                                          bool saturating = false);

/// Runs the discriminator on real, detached fake and attached fake sketches.
AdversarialLosses adversarial_losses(PatchDiscriminator& discriminator, const torch::Tensor& real,
                                     const torch::Tensor& fake, bool saturating = false);

}  // namespace refsketch
