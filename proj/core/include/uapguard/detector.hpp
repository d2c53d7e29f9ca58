#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "uapguard/adversarial.hpp"
#include "uapguard/datasets.hpp"
#include "uapguard/model_zoo.hpp"
#include "uapguard/nn.hpp"

namespace uapguard {

/// Outcome of the consistency test on one image.
struct Verdict {
  std::size_t id = 0;
  int label = 0;            // prediction on the untouched image
  int perturbed_label = 0;  // prediction on clip(image + eta)
  bool is_backdoor = false;
  std::optional<int> inferred_target;

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

/// is_backdoor is exactly (label == perturbed_label); the inferred target is
/// the unperturbed prediction of a flagged image.
Verdict make_verdict(std::size_t id, int label, int perturbed_label);

/// Throws ShapeError when eta and image differ in shape.
Verdict classify_pair(const Model& model, const Tensor& eta, const Tensor& image, std::size_t id = 0);

/// classify_pair over a dataset, batched; ids are dataset positions.
std::vector<Verdict> classify_dataset(const Model& model, const Tensor& eta, const LabeledDataset& ds);

/// Produces a per-image perturbation (DeepFool, PGD, C&W) for the consistency test.
using PerImageGenerator = std::function<Perturbation(const Model&, const Tensor&)>;

std::vector<Verdict> classify_image_specific(const Model& model, const PerImageGenerator& generator,
                                             const LabeledDataset& ds);

/// A universal perturbation that fooled at least `threshold` of a held-out
/// clean set. Only obtainable through check(), so detector entry points that
/// take one cannot run on a degenerate eta.
class GatedPerturbation {
 public:
  /// Throws GateError when the held-out fooling rate is below `threshold`.
  static GatedPerturbation check(const Model& model, Perturbation perturbation, const LabeledDataset& heldout,
                                 double threshold);

  const Perturbation& perturbation() const noexcept { return perturbation_; }
  const Tensor& eta() const noexcept { return perturbation_.delta; }
  double heldout_fooling_rate() const noexcept { return fooling_rate_; }
  double threshold() const noexcept { return threshold_; }

 private:
  GatedPerturbation(Perturbation p, double rate, double threshold)
      : perturbation_(std::move(p)), fooling_rate_(rate), threshold_(threshold) {}

  Perturbation perturbation_;
  double fooling_rate_;
  double threshold_;
};

inline constexpr double kDefaultGateThreshold = 0.6;

struct SanitizationResult {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> flagged;
  std::vector<Verdict> verdicts;

  std::size_t total() const noexcept { return verdicts.size(); }
  double flagged_fraction() const noexcept {
    return verdicts.empty() ? 0.0 : static_cast<double>(flagged.size()) / static_cast<double>(verdicts.size());
  }
};

/// Training-stage use: every image of `ds` goes through the consistency test;
/// flagged images are the suspected backdoor instances.
SanitizationResult sanitize_training_set(const Model& model, const GatedPerturbation& eta, const LabeledDataset& ds);

struct GuardDecision {
  bool accepted = true;
  /// Accepted: the model's prediction. Rejected: the inferred target label.
  int label = 0;
  /// A rejection also marks the serving model as backdoored.
  bool model_backdoored = false;
};

GuardDecision to_guard_decision(const Verdict& v);

/// Inference-stage use on a single input.
GuardDecision infer_with_guard(const Model& model, const GatedPerturbation& eta, const Tensor& image);

/// Trains `fresh_model` on the images sanitisation kept.
TrainResult retrain_after_sanitize(const LabeledDataset& ds, const SanitizationResult& result, const TrainConfig& cfg,
                                   Model fresh_model);

}  // namespace uapguard
