#include "uapguard/experiment.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <fstream>
#include <future>
#include <numeric>

#include "uapguard/backdoor.hpp"
#include "uapguard/errors.hpp"
#include "uapguard/model_zoo.hpp"
#include "uapguard/strip.hpp"

namespace uapguard {

StageError::StageError(std::string stage, std::string config_hash, const std::string& message)
    : std::runtime_error("[" + stage + "] " + message + " (config " + config_hash + ")"),
      stage_(std::move(stage)),
      hash_(std::move(config_hash)) {}

DatasetFiles load_dataset_files(const DatasetConfig& cfg) {
  DatasetFiles files;
  if (cfg.name == "fashion-mnist") {
    const auto dir = cfg.data_dir / "fashion-mnist";
    files.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", "fashion-mnist");
    files.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", "fashion-mnist");
  } else if (cfg.name == "cifar10") {
    const auto dir = cfg.data_dir / "cifar-10-batches-bin";
    std::vector<std::filesystem::path> batches;
    for (int i = 1; i <= 5; ++i) batches.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    files.train = load_cifar10(batches, "cifar10");
    const std::array<std::filesystem::path, 1> test{dir / "test_batch.bin"};
    files.test = load_cifar10(test, "cifar10");
  } else {
    throw std::invalid_argument("unknown dataset '" + cfg.name + "'");
  }
  return files;
}

ExperimentData prepare_data(const ExperimentConfig& cfg, const DatasetFiles& files) {
  const DatasetConfig& d = cfg.dataset;
  const std::size_t pool_total = d.train_size + d.uap_set_size + d.gate_set_size + d.strip_pool_size;
  const auto idx = sample_indices(files.train, pool_total, derive_seed(cfg.seed, SeedStream::Split), true);
  auto take = [&idx](std::size_t first, std::size_t count) {
    return std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(first),
                                    idx.begin() + static_cast<std::ptrdiff_t>(first + count));
  };
  ExperimentData data;
  std::size_t at = 0;
  data.train = subset(files.train, take(at, d.train_size));
  at += d.train_size;
  data.uap_set = subset(files.train, take(at, d.uap_set_size));
  at += d.uap_set_size;
  data.gate_set = subset(files.train, take(at, d.gate_set_size));
  at += d.gate_set_size;
  data.strip_pool = subset(files.train, take(at, d.strip_pool_size));
  data.test = subsample(files.test, std::min(d.test_size, files.test.size()),
                        derive_seed(cfg.seed, SeedStream::Test), true);
  return data;
}

ExperimentData prepare_data(const ExperimentConfig& cfg) { return prepare_data(cfg, load_dataset_files(cfg.dataset)); }

AttackSetup prepare_attack(const ExperimentConfig& cfg) {
  ExperimentData data = prepare_data(cfg);
  PoisonedDataset poisoned = poison(data.train, cfg.trigger, cfg.poison.rate, cfg.poison.target_label,
                                    derive_seed(cfg.seed, SeedStream::Poison));
  BackdoorTestSet backdoor = make_backdoor_testset(data.test, cfg.trigger, cfg.poison.target_label);
  return AttackSetup{std::move(data), std::move(poisoned), std::move(backdoor)};
}

Model obtain_model(const ExperimentConfig& cfg, const AttackSetup& setup, ModelCache& cache, bool poisoned) {
  return cache.get_or_train(training_key(cfg, poisoned), [&] {
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, SeedStream::Train);
    const LabeledDataset& ds = poisoned ? setup.poisoned.data : setup.data.train;
    Model fresh = make_small_cnn(ds.spec(), ds.class_count, derive_seed(cfg.seed, SeedStream::Init), cfg.architecture);
    return train(std::move(fresh), ds, tc).model;
  });
}

Perturbation experiment_uap(const ExperimentConfig& cfg, const Model& model, const ExperimentData& data) {
  UapConfig uc = cfg.uap;
  uc.seed = derive_seed(cfg.seed, SeedStream::Uap);
  return generate_uap(model, data.uap_set, uc);
}

StripMaterial strip_material(const ExperimentConfig& cfg, const ExperimentData& data) {
  const std::size_t half = data.strip_pool.size() / 2;
  std::vector<std::size_t> first(half), second(data.strip_pool.size() - half);
  std::iota(first.begin(), first.end(), std::size_t{0});
  std::iota(second.begin(), second.end(), half);
  StripConfig sc = cfg.strip.strip;
  sc.seed = derive_seed(cfg.seed, SeedStream::Strip);
  return StripMaterial{select_overlays(subset(data.strip_pool, first), sc), subset(data.strip_pool, second),
                       sc.blend_weight};
}

ModelCache::ModelCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

bool ModelCache::contains(const std::string& key) const {
  std::lock_guard lock(mutex_);
  return models_.contains(key) || (!dir_.empty() && std::filesystem::exists(dir_ / (key + ".model")));
}

Model ModelCache::get_or_train(const std::string& key, const std::function<Model()>& train_fn) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = models_.find(key); it != models_.end()) return it->second;
    if (!dir_.empty()) {
      const auto path = dir_ / (key + ".model");
      if (std::filesystem::exists(path)) {
        Model m = load_model(path);
        models_.emplace(key, m);
        return m;
      }
    }
  }
  const auto start = std::chrono::steady_clock::now();
  Model m = train_fn();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::lock_guard lock(mutex_);
  if (!dir_.empty()) {
    std::filesystem::create_directories(dir_);
    const auto tmp = dir_ / (key + ".model.tmp");
    save_model(m, tmp);
    std::filesystem::rename(tmp, dir_ / (key + ".model"));
    std::ofstream(dir_ / (key + ".seconds")) << seconds << '\n';
  }
  models_.emplace(key, m);
  seconds_[key] = seconds;
  return m;
}

std::optional<double> ModelCache::training_seconds(const std::string& key) const {
  std::lock_guard lock(mutex_);
  if (auto it = seconds_.find(key); it != seconds_.end()) return it->second;
  if (dir_.empty()) return std::nullopt;
  std::ifstream in(dir_ / (key + ".seconds"));
  double s = 0.0;
  if (in >> s) return s;
  return std::nullopt;
}

namespace {

struct Detection {
  std::vector<Verdict> clean;
  std::vector<Verdict> stamped;
  UapSummary summary;
  std::optional<GatedPerturbation> gated;
};

LabeledDataset head(const LabeledDataset& ds, std::size_t limit) {
  if (limit == 0 || limit >= ds.size()) return ds;
  std::vector<std::size_t> idx(limit);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(ds, idx);
}

PerImageGenerator make_generator(const ExperimentConfig& cfg) {
  const DetectorConfig& d = cfg.detector;
  switch (d.generator) {
    case PerturbationMethod::DeepFool:
      return [d](const Model& m, const Tensor& x) { return deepfool(m, x, d.deepfool_max_iter, d.deepfool_overshoot); };
    case PerturbationMethod::Pgd: {
      const float eps = d.effective_pgd_eps(cfg.uap.xi);
      return [d, eps](const Model& m, const Tensor& x) { return pgd(m, x, eps, d.pgd_step, d.pgd_iters); };
    }
    case PerturbationMethod::CwLite:
      return [d](const Model& m, const Tensor& x) { return cw_lite(m, x, d.cw_confidence, d.cw_steps, d.cw_lr, d.cw_c); };
    default:
      throw std::invalid_argument("no per-image generator for method '" + std::string(to_string(d.generator)) + "'");
  }
}

double fooled_fraction(std::span<const Verdict> verdicts) {
  if (verdicts.empty()) return 0.0;
  const auto flagged = std::count_if(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.is_backdoor; });
  return 1.0 - static_cast<double>(flagged) / static_cast<double>(verdicts.size());
}

void add_rows(std::vector<VerdictRow>& rows, const std::string& set, std::span<const Verdict> verdicts,
              const std::string& method) {
  for (const Verdict& v : verdicts) {
    rows.push_back(VerdictRow{set + ":" + std::to_string(v.id), v.label, v.perturbed_label, v.is_backdoor,
                              v.inferred_target, method});
  }
}

StripSummary strip_summary(double quantile, double threshold, std::span<const double> clean_scores,
                           std::span<const double> stamped_scores, std::span<const int> stamped_pred, int target) {
  StripSummary s;
  s.quantile = quantile;
  s.threshold = threshold;
  s.frr.denominator = clean_scores.size();
  for (double v : clean_scores) s.frr.numerator += v < threshold ? 1 : 0;
  s.far.denominator = stamped_scores.size();
  s.basr_after.denominator = stamped_scores.size();
  for (std::size_t i = 0; i < stamped_scores.size(); ++i) {
    const bool flagged = stamped_scores[i] < threshold;
    s.far.numerator += flagged ? 0 : 1;
    s.basr_after.numerator += (!flagged && stamped_pred[i] == target) ? 1 : 0;
  }
  return s;
}

void add_strip_rows(std::vector<VerdictRow>& rows, const std::string& set, std::span<const double> scores,
                    std::span<const int> pred, double threshold, const std::string& method) {
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flagged = scores[i] < threshold;
    rows.push_back(VerdictRow{set + ":" + std::to_string(i), pred[i], std::nullopt, flagged,
                              flagged ? std::optional<int>(pred[i]) : std::nullopt, method});
  }
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, ModelCache* cache, const ProgressFn& progress) {
  const std::string hash = config_hash(cfg);
  auto note = [&](const std::string& stage, const std::string& msg) {
    if (progress) progress(stage, msg);
  };
  run_stage("config", hash, [&] { cfg.validate(); });

  ModelCache local_cache(cfg.model_cache_dir);
  ModelCache& models = cache ? *cache : local_cache;

  note("load", "preparing " + cfg.dataset.name);
  const AttackSetup setup = run_stage("load", hash, [&] { return prepare_attack(cfg); });
  const ExperimentData& data = setup.data;
  const PoisonedDataset& poisoned = setup.poisoned;
  const BackdoorTestSet& backdoor = setup.backdoor;
  const InputSpec spec = data.train.spec();
  const std::size_t classes = data.train.class_count;
  TrainConfig train_cfg = cfg.train;
  train_cfg.seed = derive_seed(cfg.seed, SeedStream::Train);
  const std::uint64_t init_seed = derive_seed(cfg.seed, SeedStream::Init);
  const int target = cfg.poison.target_label;

  ExperimentOutcome out;
  ExperimentReport& rep = out.report;
  rep.name = cfg.name;
  rep.dataset = cfg.dataset.name;
  rep.config_hash = hash;
  rep.seed = cfg.seed;
  rep.target_label = target;
  rep.train_size = data.train.size();
  rep.test_size = data.test.size();

  note("train", "poisoned model");
  out.model = run_stage("train", hash, [&] { return obtain_model(cfg, setup, models, true); });
  const Model& model = *out.model;
  rep.clean_accuracy = evaluate(model, data.test);
  rep.basr_before = compute_basr(model, backdoor.stamped, target);
  if (cfg.train_clean_twin) {
    note("train", "clean twin");
    const Model twin = run_stage("train", hash, [&] { return obtain_model(cfg, setup, models, false); });
    rep.twin_accuracy = evaluate(twin, data.test);
  }

  Detection det;
  const std::string method(to_string(cfg.detector.generator));
  if (cfg.detector.generator == PerturbationMethod::Uap) {
    note("uap", "generating universal perturbation");
    Perturbation eta = run_stage("uap", hash, [&] { return experiment_uap(cfg, model, data); });
    det.summary.method = PerturbationMethod::Uap;
    det.summary.xi = cfg.uap.xi;
    det.summary.linf = linf_norm(eta.delta);
    det.summary.generation_fooling_rate = eta.fooling_rate;
    det.summary.passes = eta.iterations;
    det.summary.gate_threshold = cfg.detector.gate_threshold;
    out.perturbation = eta;
    det.gated = run_stage("gate", hash, [&] {
      return GatedPerturbation::check(model, std::move(eta), data.gate_set, cfg.detector.gate_threshold);
    });
    det.summary.heldout_fooling_rate = det.gated->heldout_fooling_rate();
    note("detect", "consistency test");
    run_stage("detect", hash, [&] {
      det.clean = classify_dataset(model, det.gated->eta(), data.test);
      det.stamped = classify_dataset(model, det.gated->eta(), backdoor.stamped);
    });
  } else {
    note("detect", "per-image " + method);
    const PerImageGenerator gen = run_stage("detect", hash, [&] { return make_generator(cfg); });
    float linf = 0.0f;
    const PerImageGenerator tracked = [&](const Model& m, const Tensor& x) {
      Perturbation p = gen(m, x);
      linf = std::max(linf, linf_norm(p.delta));
      return p;
    };
    const auto gate_verdicts = run_stage("gate", hash, [&] {
      auto v = classify_image_specific(model, tracked, head(data.gate_set, cfg.detector.eval_limit));
      const double rate = fooled_fraction(v);
      if (rate < cfg.detector.gate_threshold) throw GateError(rate, cfg.detector.gate_threshold);
      return v;
    });
    det.summary.method = cfg.detector.generator;
    det.summary.xi = cfg.detector.generator == PerturbationMethod::Pgd ? cfg.detector.effective_pgd_eps(cfg.uap.xi) : 0.0f;
    det.summary.generation_fooling_rate = fooled_fraction(gate_verdicts);
    det.summary.heldout_fooling_rate = det.summary.generation_fooling_rate;
    det.summary.gate_threshold = cfg.detector.gate_threshold;
    run_stage("detect", hash, [&] {
      det.clean = classify_image_specific(model, tracked, head(data.test, cfg.detector.eval_limit));
      det.stamped = classify_image_specific(model, tracked, head(backdoor.stamped, cfg.detector.eval_limit));
    });
    det.summary.linf = linf;
  }
  rep.perturbation = det.summary;
  rep.frr = compute_frr(det.clean);
  rep.far = compute_far(det.stamped);
  rep.detected = detected_count(det.stamped);
  rep.basr_after = compute_basr(det.stamped, target);
  add_rows(out.verdicts, "clean_test", det.clean, method);
  add_rows(out.verdicts, "stamped_test", det.stamped, method);

  if (cfg.detector.sanitize && det.gated) {
    note("sanitize", "screening the training set");
    const SanitizationResult san =
        run_stage("sanitize", hash, [&] { return sanitize_training_set(model, *det.gated, poisoned.data); });
    SanitizationSummary s;
    s.total = san.total();
    s.flagged = san.flagged.size();
    s.poisoned = poisoned.poisoned_indices.size();
    for (std::size_t i : san.flagged) {
      s.flagged_poisoned += std::binary_search(poisoned.poisoned_indices.begin(), poisoned.poisoned_indices.end(), i) ? 1 : 0;
    }
    add_rows(out.verdicts, "train", san.verdicts, method);
    if (cfg.detector.retrain) {
      note("retrain", "training on kept images");
      const Model retrained = run_stage("retrain", hash, [&] {
        return retrain_after_sanitize(poisoned.data, san, train_cfg,
                                      make_small_cnn(spec, classes, init_seed, cfg.architecture))
            .model;
      });
      s.retrained_accuracy = evaluate(retrained, data.test);
      s.retrained_basr = compute_basr(retrained, backdoor.stamped, target);
    }
    rep.sanitization = s;
  }

  if (cfg.strip.enabled) {
    note("strip", "entropy baseline");
    run_stage("strip", hash, [&] {
      const StripMaterial mat = strip_material(cfg, data);
      const Tensor& overlays = mat.overlays;
      const LabeledDataset& calibration = mat.calibration;
      const float w = mat.blend_weight;
      const auto cal_scores = strip_scores(model, calibration, overlays, w);
      const auto clean_scores = strip_scores(model, data.test, overlays, w);
      const auto stamped_scores = strip_scores(model, backdoor.stamped, overlays, w);
      const auto clean_pred = predict_batch(model, data.test.images);
      const auto stamped_pred = predict_batch(model, backdoor.stamped.images);

      const double q = cfg.strip.calibration_quantile;
      const double thr = calibrate_strip_threshold(cal_scores, q);
      rep.strip = strip_summary(q, thr, clean_scores, stamped_scores, stamped_pred, target);
      add_strip_rows(out.verdicts, "clean_test", clean_scores, clean_pred, thr, "strip");
      add_strip_rows(out.verdicts, "stamped_test", stamped_scores, stamped_pred, thr, "strip");

      const double qm = rep.frr.rate();
      const double thr_m = calibrate_strip_threshold(cal_scores, qm);
      rep.strip_matched = strip_summary(qm, thr_m, clean_scores, stamped_scores, stamped_pred, target);
      add_strip_rows(out.verdicts, "clean_test", clean_scores, clean_pred, thr_m, "strip_matched");
      add_strip_rows(out.verdicts, "stamped_test", stamped_scores, stamped_pred, thr_m, "strip_matched");

      for (std::size_t i = 0; i < clean_scores.size(); ++i)
        out.strip_scores.emplace_back("clean_test:" + std::to_string(i), clean_scores[i]);
      for (std::size_t i = 0; i < stamped_scores.size(); ++i)
        out.strip_scores.emplace_back("stamped_test:" + std::to_string(i), stamped_scores[i]);
    });
  }
  note("done", "experiment complete");
  return out;
}

std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Transparency: return "transparency";
    case SweepAxis::Size: return "size";
    case SweepAxis::Pattern: return "pattern";
    case SweepAxis::Generator: return "generator";
  }
  return "?";
}

SweepAxis parse_sweep_axis(std::string_view s) {
  for (auto a : {SweepAxis::Transparency, SweepAxis::Size, SweepAxis::Pattern, SweepAxis::Generator}) {
    if (s == to_string(a)) return a;
  }
  throw std::invalid_argument("unknown sweep axis '" + std::string(s) + "'");
}

namespace {

std::size_t axis_length(const ExperimentConfig& cfg, SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Transparency: return cfg.sweep.transparency.size();
    case SweepAxis::Size: return cfg.sweep.sizes.size();
    case SweepAxis::Pattern: return cfg.sweep.patterns.size();
    case SweepAxis::Generator: return cfg.sweep.generators.size();
  }
  return 0;
}

std::string axis_value(const ExperimentConfig& cfg, SweepAxis axis, std::size_t i) {
  switch (axis) {
    case SweepAxis::Transparency: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", static_cast<double>(cfg.sweep.transparency[i]));
      return buf;
    }
    case SweepAxis::Size: {
      const std::size_t v = cfg.sweep.sizes[i];
      if (cfg.trigger.pattern == TriggerPattern::CornerRectangles)
        return std::to_string(cfg.trigger.rect_thickness) + "x" + std::to_string(v);
      return std::to_string(v) + "x" + std::to_string(v);
    }
    case SweepAxis::Pattern: return std::string(to_string(cfg.sweep.patterns[i]));
    case SweepAxis::Generator: return std::string(to_string(cfg.sweep.generators[i]));
  }
  return {};
}

}  // namespace

ExperimentConfig sweep_cell_config(const ExperimentConfig& cfg, SweepAxis axis, std::size_t i) {
  ExperimentConfig cell = cfg;
  cell.detector.sanitize = false;
  cell.detector.retrain = false;
  cell.strip.enabled = false;
  cell.train_clean_twin = false;
  cell.name = cfg.name + "/" + std::string(to_string(axis)) + "=" + axis_value(cfg, axis, i);
  switch (axis) {
    case SweepAxis::Transparency:
      cell.trigger.transparency = cfg.sweep.transparency[i];
      break;
    case SweepAxis::Size:
      if (cfg.trigger.pattern == TriggerPattern::CornerRectangles) {
        cell.trigger.rect_length = cfg.sweep.sizes[i];
      } else if (cfg.trigger.pattern == TriggerPattern::Square) {
        cell.trigger.square_side = cfg.sweep.sizes[i];
      } else {
        throw std::invalid_argument("size sweep needs a corner-rectangles or square trigger");
      }
      break;
    case SweepAxis::Pattern:
      cell.trigger.pattern = cfg.sweep.patterns[i];
      break;
    case SweepAxis::Generator:
      cell.detector.generator = cfg.sweep.generators[i];
      break;
  }
  return cell;
}

SweepTable run_sweep(const ExperimentConfig& cfg, SweepAxis axis, ModelCache* cache, const ProgressFn& progress) {
  ModelCache local_cache(cfg.model_cache_dir);
  ModelCache& models = cache ? *cache : local_cache;
  SweepTable table;
  table.axis = std::string(to_string(axis));
  const std::size_t n = axis_length(cfg, axis);
  table.rows.resize(n);

  auto run_cell = [&](std::size_t i) {
    SweepRow& row = table.rows[i];
    row.value = axis_value(cfg, axis, i);
    try {
      const ExperimentConfig cell = sweep_cell_config(cfg, axis, i);
      if (progress) progress("sweep", table.axis + "=" + row.value);
      const ExperimentOutcome res = run_experiment(cell, &models, progress);
      const ExperimentReport& r = res.report;
      row.clean_accuracy = r.clean_accuracy;
      row.basr_before = r.basr_before;
      row.basr_after = r.basr_after;
      row.frr = r.frr;
      row.far = r.far;
      row.fooling_rate = r.perturbation.heldout_fooling_rate;
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
      // the attack itself may still be measurable, e.g. after a gate rejection
      try {
        const ExperimentConfig cell = sweep_cell_config(cfg, axis, i);
        if (!models.contains(training_key(cell, true))) return;
        const AttackSetup setup = prepare_attack(cell);
        const Model model = obtain_model(cell, setup, models, true);
        row.clean_accuracy = evaluate(model, setup.data.test);
        row.basr_before = compute_basr(model, setup.backdoor.stamped, cell.poison.target_label);
      } catch (const std::exception&) {
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, cfg.sweep.workers);
  for (std::size_t start = 0; start < n; start += workers) {
    const std::size_t stop = std::min(n, start + workers);
    if (stop - start == 1) {
      run_cell(start);
      continue;
    }
    std::vector<std::future<void>> jobs;
    for (std::size_t i = start; i < stop; ++i) jobs.push_back(std::async(std::launch::async, run_cell, i));
    for (auto& j : jobs) j.get();
  }
  return table;
}

}  // namespace uapguard
