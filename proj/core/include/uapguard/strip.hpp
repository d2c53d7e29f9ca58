#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "uapguard/datasets.hpp"
#include "uapguard/nn.hpp"

namespace uapguard {

struct StripConfig {
  std::size_t overlay_count = 20;
  float blend_weight = 0.5f;
  /// Inputs scoring strictly below this entropy are flagged; 0 never flags.
  double threshold = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// weight * input + (1 - weight) * overlay, clipped to [0, 1].
Tensor blend(const Tensor& input, const Tensor& overlay, float weight);

/// -(1/N) sum_n sum_k p[n][k] log2 p[n][k], with 0 log 0 = 0.
double mean_shannon_entropy(std::span<const std::vector<double>> probabilities);

/// Mean entropy (bits) of the softmax outputs over the input blended with
/// each overlay. `overlays` is an (N, C, H, W) batch with N >= 2.
double entropy_score(const Model& model, const Tensor& input, const Tensor& overlays, float weight);

/// Draws cfg.overlay_count images from `pool` with cfg.seed.
Tensor select_overlays(const LabeledDataset& pool, const StripConfig& cfg);

struct StripResult {
  bool flagged = false;
  double score = 0.0;
};

StripResult strip_detect(const Model& model, const Tensor& input, const Tensor& overlays, const StripConfig& cfg);

std::vector<double> strip_scores(const Model& model, const LabeledDataset& ds, const Tensor& overlays, float weight);

/// Lower `quantile` of clean scores (nearest rank): about that fraction of
/// clean inputs score below it.
double calibrate_strip_threshold(std::span<const double> clean_scores, double quantile);

}  // namespace uapguard
