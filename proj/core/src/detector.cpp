#include "uapguard/detector.hpp"

#include <stdexcept>

#include "uapguard/errors.hpp"

namespace uapguard {

Verdict make_verdict(std::size_t id, int label, int perturbed_label) {
  Verdict v;
  v.id = id;
  v.label = label;
  v.perturbed_label = perturbed_label;
  v.is_backdoor = label == perturbed_label;
  if (v.is_backdoor) v.inferred_target = label;
  return v;
}

Verdict classify_pair(const Model& model, const Tensor& eta, const Tensor& image, std::size_t id) {
  if (eta.shape() != image.shape()) {
    throw ShapeError("perturbation " + shape_string(eta.shape()) + " does not match image " +
                     shape_string(image.shape()));
  }
  return make_verdict(id, predict(model, image), predict(model, add_clipped(image, eta)));
}

std::vector<Verdict> classify_dataset(const Model& model, const Tensor& eta, const LabeledDataset& ds) {
  if (ds.empty()) return {};
  if (eta.shape() != ds.spec().shape()) {
    throw ShapeError("perturbation " + shape_string(eta.shape()) + " does not match images " +
                     shape_string(ds.spec().shape()));
  }
  const auto clean = predict_batch(model, ds.images);
  const auto perturbed = predict_batch(model, add_clipped(ds.images, eta));
  std::vector<Verdict> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(make_verdict(i, clean[i], perturbed[i]));
  return out;
}

std::vector<Verdict> classify_image_specific(const Model& model, const PerImageGenerator& generator,
                                             const LabeledDataset& ds) {
  std::vector<Verdict> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor image = ds.image(i);
    const Perturbation p = generator(model, image);
    out.push_back(classify_pair(model, p.delta, image, i));
  }
  return out;
}

GatedPerturbation GatedPerturbation::check(const Model& model, Perturbation perturbation,
                                           const LabeledDataset& heldout, double threshold) {
  if (heldout.empty()) throw std::invalid_argument("gate: empty held-out set");
  const double rate = fooling_rate(model, perturbation.delta, heldout);
  if (rate < threshold) throw GateError(rate, threshold);
  return GatedPerturbation(std::move(perturbation), rate, threshold);
}

SanitizationResult sanitize_training_set(const Model& model, const GatedPerturbation& eta, const LabeledDataset& ds) {
  SanitizationResult result;
  result.verdicts = classify_dataset(model, eta.eta(), ds);
  for (const Verdict& v : result.verdicts) (v.is_backdoor ? result.flagged : result.kept).push_back(v.id);
  return result;
}

GuardDecision to_guard_decision(const Verdict& v) {
  GuardDecision d;
  d.accepted = !v.is_backdoor;
  d.label = v.inferred_target.value_or(v.label);
  d.model_backdoored = v.is_backdoor;
  return d;
}

GuardDecision infer_with_guard(const Model& model, const GatedPerturbation& eta, const Tensor& image) {
  return to_guard_decision(classify_pair(model, eta.eta(), image));
}

TrainResult retrain_after_sanitize(const LabeledDataset& ds, const SanitizationResult& result, const TrainConfig& cfg,
                                   Model fresh_model) {
  if (result.total() != ds.size()) {
    throw std::invalid_argument("sanitisation result covers " + std::to_string(result.total()) +
                                " images, dataset has " + std::to_string(ds.size()));
  }
  return train(std::move(fresh_model), subset(ds, result.kept), cfg);
}

}  // namespace uapguard
