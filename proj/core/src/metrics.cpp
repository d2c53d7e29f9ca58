#include "uapguard/metrics.hpp"

#include <stdexcept>

namespace uapguard {

namespace {

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw std::invalid_argument(std::string(what) + ": empty evaluation set");
}

}  // namespace

Guard make_uap_guard(const Model& model, const Tensor& eta) {
  return [&model, eta](const LabeledDataset& ds) { return classify_dataset(model, eta, ds); };
}

RateCount compute_basr(const Model& model, const LabeledDataset& stamped, int target) {
  require_nonempty(stamped.size(), "basr");
  RateCount r{0, stamped.size()};
  for (int p : predict_batch(model, stamped.images)) r.numerator += p == target ? 1 : 0;
  return r;
}

RateCount compute_basr(std::span<const Verdict> stamped_verdicts, int target) {
  require_nonempty(stamped_verdicts.size(), "basr");
  RateCount r{0, stamped_verdicts.size()};
  for (const Verdict& v : stamped_verdicts) r.numerator += (!v.is_backdoor && v.label == target) ? 1 : 0;
  return r;
}

RateCount compute_basr(const Guard& guard, const LabeledDataset& stamped, int target) {
  require_nonempty(stamped.size(), "basr");
  return compute_basr(guard(stamped), target);
}

RateCount compute_frr(std::span<const Verdict> clean_verdicts) {
  require_nonempty(clean_verdicts.size(), "frr");
  RateCount r{0, clean_verdicts.size()};
  for (const Verdict& v : clean_verdicts) r.numerator += v.is_backdoor ? 1 : 0;
  return r;
}

RateCount compute_frr(const Guard& guard, const LabeledDataset& clean) {
  require_nonempty(clean.size(), "frr");
  return compute_frr(guard(clean));
}

RateCount compute_far(std::span<const Verdict> stamped_verdicts) {
  require_nonempty(stamped_verdicts.size(), "far");
  RateCount r{0, stamped_verdicts.size()};
  for (const Verdict& v : stamped_verdicts) r.numerator += v.is_backdoor ? 0 : 1;
  return r;
}

RateCount compute_far(const Guard& guard, const LabeledDataset& stamped) {
  require_nonempty(stamped.size(), "far");
  return compute_far(guard(stamped));
}

RateCount detected_count(std::span<const Verdict> stamped_verdicts) {
  RateCount r{0, stamped_verdicts.size()};
  for (const Verdict& v : stamped_verdicts) r.numerator += v.is_backdoor ? 1 : 0;
  return r;
}

}  // namespace uapguard
