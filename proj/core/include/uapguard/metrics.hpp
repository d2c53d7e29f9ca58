#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "uapguard/datasets.hpp"
#include "uapguard/detector.hpp"
#include "uapguard/nn.hpp"

namespace uapguard {

/// A rate kept as integer counts so reports can be re-derived exactly.
struct RateCount {
  std::size_t numerator = 0;
  std::size_t denominator = 0;

  double rate() const noexcept {
    return denominator ? static_cast<double>(numerator) / static_cast<double>(denominator) : 0.0;
  }
  friend bool operator==(const RateCount&, const RateCount&) = default;
};

/// Screens a dataset and returns one verdict per image (is_backdoor = rejected).
using Guard = std::function<std::vector<Verdict>(const LabeledDataset&)>;

/// Guard running the consistency test with a fixed universal perturbation.
Guard make_uap_guard(const Model& model, const Tensor& eta);

/// Backdoor attack success rate without a defence: stamped images predicted
/// as `target`. Throws std::invalid_argument on an empty set.
RateCount compute_basr(const Model& model, const LabeledDataset& stamped, int target);

/// With a defence: an image succeeds only if it was accepted and its
/// unperturbed prediction is `target`.
RateCount compute_basr(std::span<const Verdict> stamped_verdicts, int target);
RateCount compute_basr(const Guard& guard, const LabeledDataset& stamped, int target);

/// Clean images rejected as backdoor instances.
RateCount compute_frr(std::span<const Verdict> clean_verdicts);
RateCount compute_frr(const Guard& guard, const LabeledDataset& clean);

/// Backdoor instances that were accepted.
RateCount compute_far(std::span<const Verdict> stamped_verdicts);
RateCount compute_far(const Guard& guard, const LabeledDataset& stamped);

/// Backdoor instances that were rejected; FAR + detected == 1.
RateCount detected_count(std::span<const Verdict> stamped_verdicts);

}  // namespace uapguard
