#include "uapguard/strip.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "uapguard/errors.hpp"

namespace uapguard {

void StripConfig::validate() const {
  if (overlay_count < 2) throw std::invalid_argument("strip: need at least two overlays");
  if (!(blend_weight >= 0.0f && blend_weight <= 1.0f)) throw std::invalid_argument("strip: blend weight in [0, 1]");
  if (!(threshold >= 0.0)) throw std::invalid_argument("strip: threshold must be non-negative");
}

Tensor blend(const Tensor& input, const Tensor& overlay, float weight) {
  if (input.shape() != overlay.shape()) {
    throw ShapeError("blend: " + shape_string(input.shape()) + " vs " + shape_string(overlay.shape()));
  }
  Tensor out = input;
  auto o = out.data();
  auto b = overlay.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(weight * o[i] + (1.0f - weight) * b[i], 0.0f, 1.0f);
  return out;
}

double mean_shannon_entropy(std::span<const std::vector<double>> probabilities) {
  if (probabilities.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : probabilities) {
    for (double v : p) {
      if (v > 0.0) total -= v * std::log2(v);
    }
  }
  return total / static_cast<double>(probabilities.size());
}

double entropy_score(const Model& model, const Tensor& input, const Tensor& overlays, float weight) {
  if (overlays.rank() != input.rank() + 1 || overlays.dim(0) < 2) {
    throw std::invalid_argument("strip: overlays must be a batch of at least two images");
  }
  const std::size_t n = overlays.dim(0);
  Tensor blended = overlays;
  auto dst = blended.data();
  auto x = input.data();
  const std::size_t stride = x.size();
  if (dst.size() != n * stride) throw ShapeError("strip: overlay shape does not match input");
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < stride; ++i) {
      float& v = dst[j * stride + i];
      v = std::clamp(weight * x[i] + (1.0f - weight) * v, 0.0f, 1.0f);
    }
  }
  const Tensor logits = model.forward(blended);
  const std::size_t k = model.classes();
  std::vector<std::vector<double>> probs;
  probs.reserve(n);
  for (std::size_t j = 0; j < n; ++j) probs.push_back(softmax_row(logits.data().subspan(j * k, k)));
  return mean_shannon_entropy(probs);
}

Tensor select_overlays(const LabeledDataset& pool, const StripConfig& cfg) {
  cfg.validate();
  return subsample(pool, cfg.overlay_count, cfg.seed).images;
}

StripResult strip_detect(const Model& model, const Tensor& input, const Tensor& overlays, const StripConfig& cfg) {
  StripResult r;
  r.score = entropy_score(model, input, overlays, cfg.blend_weight);
  r.flagged = r.score < cfg.threshold;
  return r;
}

std::vector<double> strip_scores(const Model& model, const LabeledDataset& ds, const Tensor& overlays, float weight) {
  std::vector<double> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(entropy_score(model, ds.image(i), overlays, weight));
  return out;
}

double calibrate_strip_threshold(std::span<const double> clean_scores, double quantile) {
  if (clean_scores.empty()) throw std::invalid_argument("strip: no calibration scores");
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw std::invalid_argument("strip: quantile must be in [0, 1]");
  std::vector<double> sorted(clean_scores.begin(), clean_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(sorted.size())));
  // flag = score < threshold, so the threshold is the first score not flagged
  if (rank >= sorted.size()) return std::nextafter(sorted.back(), std::numeric_limits<double>::infinity());
  return sorted[rank];
}

}  // namespace uapguard
