#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string_view>

#include "uapguard/datasets.hpp"
#include "uapguard/nn.hpp"
#include "uapguard/tensor.hpp"

namespace uapguard {

enum class PerturbationMethod : std::uint32_t { None = 0, DeepFool = 1, Pgd = 2, CwLite = 3, Uap = 4 };

std::string_view to_string(PerturbationMethod m);
PerturbationMethod parse_perturbation_method(std::string_view s);

/// Image-shaped additive perturbation.
struct Perturbation {
  Tensor delta;
  /// l-infinity radius the generator promised; linf_norm(delta) <= budget.
  float budget = 0.0f;
  PerturbationMethod method = PerturbationMethod::None;
  /// Universal perturbations: fooling rate on the generation set.
  /// Image-specific ones: 1 if the prediction changed, else 0.
  double fooling_rate = 0.0;
  /// Image-specific: the prediction changed. Universal: the target rate was reached.
  bool succeeded = false;
  std::size_t iterations = 0;
};

/// Geometry of the DeepFool linearised step.
enum class DeepFoolNorm { L2, Linf };

std::string_view to_string(DeepFoolNorm n);
DeepFoolNorm parse_deepfool_norm(std::string_view s);

/// Iterative linearisation towards the closest decision boundary, moving away
/// from the model's current prediction. Each step accumulates
/// |f_l| / ||w_l||^2 * w_l (L2) or |f_l| / ||w_l||_1 * sign(w_l) (Linf) for the
/// closest class l; candidate images are clip(x + (1 + overshoot) * r). The
/// returned delta is the clipped difference, so image + delta is already
/// inside [0, 1].
Perturbation deepfool(const Model& model, const Tensor& image, std::size_t max_iter, float overshoot,
                      DeepFoolNorm norm = DeepFoolNorm::L2);

/// Called after every PGD step with the step index and the current delta.
using IterateObserver = std::function<void(std::size_t, const Tensor&)>;

/// Sign-gradient ascent on cross-entropy with respect to `away_from`
/// (default: the current prediction), projected onto the eps ball and the
/// pixel box after every step.
Perturbation pgd(const Model& model, const Tensor& image, float eps, float step, std::size_t iters,
                 std::optional<int> away_from = std::nullopt, const IterateObserver& observer = {});

/// Single-constant Carlini-Wagner l2 attack: Adam on w with
/// x' = (tanh(w) + 1) / 2 minimising ||x' - x||^2 + c * max(z_y - max_{j != y} z_j, -confidence).
/// Returns the smallest fooling iterate, or the last iterate if none fooled.
Perturbation cw_lite(const Model& model, const Tensor& image, float confidence, std::size_t steps, float lr,
                     float c);

struct UapConfig {
  float xi = 0.1f;
  double target_fooling_rate = 0.8;
  std::size_t max_passes = 10;
  std::size_t deepfool_max_iter = 50;
  float overshoot = 0.02f;
  DeepFoolNorm inner_norm = DeepFoolNorm::L2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Invoked after each pass over the generation set with the pass number and eta.
using PassObserver = std::function<void(std::size_t, const Tensor&, double)>;

/// Universal perturbation under an l-infinity budget. Passes over the
/// (reshuffled) clean set run DeepFool on every image the current eta does
/// not fool and fold the result back into the xi ball, until the fooling rate
/// reaches the target or the pass budget runs out. Falling short is reported
/// through `succeeded == false`.
Perturbation generate_uap(const Model& model, const LabeledDataset& clean_set, const UapConfig& cfg,
                          const PassObserver& observer = {});

/// Fraction of images whose prediction changes under clip(x + eta).
double fooling_rate(const Model& model, const Tensor& eta, const LabeledDataset& ds);

void save_perturbation(const Perturbation& p, const std::filesystem::path& path);
Perturbation load_perturbation(const std::filesystem::path& path);

inline constexpr char kPerturbationMagic[8] = {'U', 'A', 'P', 'G', 'P', 'E', 'R', 'T'};
inline constexpr std::uint32_t kPerturbationFormatVersion = 1;

}  // namespace uapguard
