#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "uapguard/adversarial.hpp"
#include "uapguard/backdoor.hpp"
#include "uapguard/model_zoo.hpp"
#include "uapguard/strip.hpp"

namespace uapguard {

struct DatasetConfig {
  /// "fashion-mnist" (IDX files) or "cifar10" (binary batches).
  std::string name = "fashion-mnist";
  std::filesystem::path data_dir = "data";
  std::size_t train_size = 10000;
  std::size_t test_size = 2000;
  /// Disjoint clean pools drawn from the training file.
  std::size_t uap_set_size = 500;
  std::size_t gate_set_size = 1000;
  std::size_t strip_pool_size = 1000;
};

struct PoisonConfig {
  double rate = 0.05;
  int target_label = 0;
};

struct DetectorConfig {
  PerturbationMethod generator = PerturbationMethod::Uap;
  double gate_threshold = 0.6;
  /// Per-image generators evaluate at most this many clean and stamped
  /// images (0 = all).
  std::size_t eval_limit = 500;
  std::size_t deepfool_max_iter = 50;
  float deepfool_overshoot = 0.02f;
  /// 0 means "same as uap.xi".
  float pgd_eps = 0.0f;
  float pgd_step = 0.01f;
  std::size_t pgd_iters = 20;
  float cw_confidence = 0.0f;
  std::size_t cw_steps = 100;
  float cw_lr = 0.01f;
  float cw_c = 1.0f;
  bool sanitize = true;
  bool retrain = true;

  float effective_pgd_eps(float xi) const { return pgd_eps > 0.0f ? pgd_eps : xi; }
};

struct StripSection {
  bool enabled = true;
  StripConfig strip;
  /// Fraction of held-out clean scores that fall below the threshold.
  double calibration_quantile = 0.01;
};

struct SweepConfig {
  std::vector<float> transparency{0.5f, 0.6f, 0.7f, 0.8f};
  /// Rectangle length for corner rectangles, side for squares.
  std::vector<std::size_t> sizes{2, 4, 6};
  std::vector<TriggerPattern> patterns{TriggerPattern::Square, TriggerPattern::Cross};
  std::vector<PerturbationMethod> generators{PerturbationMethod::CwLite, PerturbationMethod::DeepFool,
                                             PerturbationMethod::Pgd, PerturbationMethod::Uap};
  std::size_t workers = 1;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "runs/experiment";
  /// Trained models are cached here keyed by everything that affects training;
  /// empty disables the on-disk cache.
  std::filesystem::path model_cache_dir;
  bool train_clean_twin = false;

  DatasetConfig dataset;
  TrainConfig train;
  SmallCnnOptions architecture;
  TriggerSpec trigger;
  PoisonConfig poison;
  UapConfig uap;
  DetectorConfig detector;
  StripSection strip;
  SweepConfig sweep;

  /// Checks every section; throws std::invalid_argument naming the key.
  void validate() const;
};

/// Defaults for a dataset: Fashion-MNIST uses four 1x10 corner bars at 0.15
/// and a 10k training subset; CIFAR-10 a 4x4 square at 0.2 and 8k images.
ExperimentConfig preset(std::string_view dataset_name);

/// INI text: `[section]` headers and `key = value` lines; `;` and `#` start
/// comments. `[dataset] name` picks the preset the other keys override.
/// Unknown sections or keys throw std::invalid_argument.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies one `section.key=value` override.
void apply_override(ExperimentConfig& cfg, std::string_view assignment);

/// Canonical INI rendering; to_ini(parse_config(to_ini(c))) == to_ini(c).
std::string to_ini(const ExperimentConfig& cfg);

/// Hex FNV-1a of the canonical rendering.
std::string config_hash(const ExperimentConfig& cfg);

/// Hash of only the settings that influence the trained model.
std::string training_key(const ExperimentConfig& cfg, bool poisoned);

/// Independent stream seeds derived from the experiment seed.
enum class SeedStream : std::uint64_t { Split = 1, Test = 2, Poison = 3, Init = 4, Train = 5, Uap = 6, Strip = 7, Twin = 8 };
std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream);

}  // namespace uapguard
