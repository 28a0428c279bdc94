#pragma once

// Procedural line renders with a (shape, style) factorization, so style
// pretraining and curation can run without third-party data or weights.
//
// A shape is a seeded set of circles, segments and rectangles. The four
// styles differ in stroke value, thickness and continuity:
//   1: thin black strokes      2: thin light-gray strokes
//   3: thick black strokes     4: medium-gray dashed strokes

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>

#include "refsketch/style_pretrain.hpp"

namespace refsketch {

inline constexpr int kSyntheticStyles = 4;

/// 1×size×size sketch in [-1, 1]. `variant` jitters primitive placement so
/// held-out renders of the same (shape, style) differ slightly.
torch::Tensor render_synthetic_sketch(int shape_id, int style_id, int64_t size,
                                      uint64_t variant = 0);

/// Solid-color square filling most of the frame, as a 3×size×size image;
/// used to seed "improper" items in curation experiments.
torch::Tensor render_color_block(int index, int64_t size);

/// Writes shapes × styles × variants PNGs under `dir` plus `dir/manifest.csv`.
StyleCorpus write_synthetic_corpus(const std::filesystem::path& dir, int shapes, int64_t size,
                                   uint64_t seed, int variants = 1);

}  // namespace refsketch
