#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "uapguard/backdoor.hpp"
#include "uapguard/config.hpp"
#include "uapguard/datasets.hpp"
#include "uapguard/detector.hpp"
#include "uapguard/metrics.hpp"
#include "uapguard/nn.hpp"

namespace uapguard {

/// Failure of one pipeline stage, tagged with the stage and config hash.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, std::string config_hash, const std::string& message);
  const std::string& stage() const noexcept { return stage_; }
  const std::string& config_hash() const noexcept { return hash_; }

 private:
  std::string stage_;
  std::string hash_;
};

/// Runs `body` and rethrows any exception as a StageError for `stage`.
template <typename F>
auto run_stage(const std::string& stage, const std::string& config_hash, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, config_hash, e.what());
  }
}

/// Disjoint subsets used by one experiment.
struct ExperimentData {
  LabeledDataset train;
  LabeledDataset uap_set;
  LabeledDataset gate_set;
  LabeledDataset strip_pool;
  LabeledDataset test;
};

/// Training/test files for the configured dataset (full size).
struct DatasetFiles {
  LabeledDataset train;
  LabeledDataset test;
};

DatasetFiles load_dataset_files(const DatasetConfig& cfg);

/// Stratified, seeded carve-up: the training file yields the training subset
/// plus the UAP, gate and STRIP pools; the test file yields the test subset.
ExperimentData prepare_data(const ExperimentConfig& cfg, const DatasetFiles& files);
ExperimentData prepare_data(const ExperimentConfig& cfg);

/// Experiment data plus the poisoned training set and the stamped test set.
struct AttackSetup {
  ExperimentData data;
  PoisonedDataset poisoned;
  BackdoorTestSet backdoor;
};

AttackSetup prepare_attack(const ExperimentConfig& cfg);

class ModelCache;

/// The model trained on the poisoned set (or the clean twin), from `cache` when present.
Model obtain_model(const ExperimentConfig& cfg, const AttackSetup& setup, ModelCache& cache, bool poisoned = true);

/// UAP on the generation pool with the experiment's derived seed.
Perturbation experiment_uap(const ExperimentConfig& cfg, const Model& model, const ExperimentData& data);

/// STRIP overlays (drawn from the first half of the STRIP pool) and the
/// calibration images (its second half).
struct StripMaterial {
  Tensor overlays;
  LabeledDataset calibration;
  float blend_weight = 0.5f;
};

StripMaterial strip_material(const ExperimentConfig& cfg, const ExperimentData& data);

/// Trained models keyed by training_key(); thread-safe. With a directory the
/// cache persists across processes.
class ModelCache {
 public:
  explicit ModelCache(std::filesystem::path dir = {});

  Model get_or_train(const std::string& key, const std::function<Model()>& train_fn);
  bool contains(const std::string& key) const;
  /// Wall time of the training run that produced `key`, when this cache (or
  /// its directory) saw it happen.
  std::optional<double> training_seconds(const std::string& key) const;

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::map<std::string, Model> models_;
  std::map<std::string, double> seconds_;
};

/// One line of the verdict stream.
struct VerdictRow {
  std::string id;  // "<set>:<index>", set in clean_test, stamped_test, train
  int y = 0;       // prediction on the untouched input
  std::optional<int> y_hat;  // prediction on the perturbed input; empty for STRIP
  bool flagged = false;
  std::optional<int> inferred_target;
  std::string method;
};

struct UapSummary {
  PerturbationMethod method = PerturbationMethod::Uap;
  float xi = 0.0f;
  float linf = 0.0f;
  double generation_fooling_rate = 0.0;
  double heldout_fooling_rate = 0.0;
  std::size_t passes = 0;
  double gate_threshold = 0.0;
};

struct SanitizationSummary {
  std::size_t total = 0;
  std::size_t flagged = 0;
  std::size_t flagged_poisoned = 0;
  std::size_t poisoned = 0;
  std::optional<double> retrained_accuracy;
  std::optional<RateCount> retrained_basr;
};

struct StripSummary {
  double quantile = 0.0;
  double threshold = 0.0;
  RateCount frr;
  RateCount far;
  RateCount basr_after;
};

struct SweepRow {
  std::string value;
  bool ok = false;
  std::string error;
  double clean_accuracy = 0.0;
  RateCount basr_before;
  RateCount basr_after;
  RateCount frr;
  RateCount far;
  double fooling_rate = 0.0;
};

struct SweepTable {
  std::string axis;
  std::vector<SweepRow> rows;
};

struct ExperimentReport {
  std::string name;
  std::string dataset;
  std::string config_hash;
  std::uint64_t seed = 0;
  int target_label = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;

  double clean_accuracy = 0.0;
  std::optional<double> twin_accuracy;
  RateCount basr_before;

  UapSummary perturbation;
  RateCount frr;
  RateCount far;
  RateCount detected;
  RateCount basr_after;

  std::optional<SanitizationSummary> sanitization;
  /// At the configured calibration quantile, and calibrated to the detector's FRR.
  std::optional<StripSummary> strip;
  std::optional<StripSummary> strip_matched;

  std::vector<SweepTable> sweeps;
};

struct ExperimentOutcome {
  ExperimentReport report;
  std::vector<VerdictRow> verdicts;
  /// id, STRIP score
  std::vector<std::pair<std::string, double>> strip_scores;
  /// The poisoned model under test; always set by run_experiment.
  std::optional<Model> model;
  std::optional<Perturbation> perturbation;
};

using ProgressFn = std::function<void(const std::string& stage, const std::string& message)>;

/// Poisoned training, gated perturbation, detection on the clean and stamped
/// test sets, sanitisation and retraining, STRIP comparison. Deterministic
/// for a given config. Any failure surfaces as a StageError.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, ModelCache* cache = nullptr,
                                 const ProgressFn& progress = {});

enum class SweepAxis { Transparency, Size, Pattern, Generator };
std::string_view to_string(SweepAxis a);
SweepAxis parse_sweep_axis(std::string_view s);

/// One experiment per axis value (sanitisation, retraining and STRIP off).
/// Failed cells are recorded with their error instead of aborting.
SweepTable run_sweep(const ExperimentConfig& cfg, SweepAxis axis, ModelCache* cache = nullptr,
                     const ProgressFn& progress = {});

/// The per-cell config a sweep uses for `axis` at value index `i`.
ExperimentConfig sweep_cell_config(const ExperimentConfig& cfg, SweepAxis axis, std::size_t i);

}  // namespace uapguard
