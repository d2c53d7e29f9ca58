#include "uapguard/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "uapguard/binary_io.hpp"
#include "uapguard/errors.hpp"

namespace uapguard {

std::string_view to_string(PerturbationMethod m) {
  switch (m) {
    case PerturbationMethod::None: return "none";
    case PerturbationMethod::DeepFool: return "deepfool";
    case PerturbationMethod::Pgd: return "pgd";
    case PerturbationMethod::CwLite: return "cw";
    case PerturbationMethod::Uap: return "uap";
  }
  return "?";
}

PerturbationMethod parse_perturbation_method(std::string_view s) {
  for (auto m : {PerturbationMethod::None, PerturbationMethod::DeepFool, PerturbationMethod::Pgd,
                 PerturbationMethod::CwLite, PerturbationMethod::Uap}) {
    if (s == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown perturbation method '" + std::string(s) + "'");
}

std::string_view to_string(DeepFoolNorm n) { return n == DeepFoolNorm::L2 ? "l2" : "linf"; }

DeepFoolNorm parse_deepfool_norm(std::string_view s) {
  if (s == "l2") return DeepFoolNorm::L2;
  if (s == "linf") return DeepFoolNorm::Linf;
  throw std::invalid_argument("unknown DeepFool norm '" + std::string(s) + "'");
}

namespace {

Tensor clipped_step(const Tensor& image, const Tensor& r, float scale) {
  Tensor out = image;
  auto o = out.data();
  auto d = r.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(o[i] + scale * d[i], 0.0f, 1.0f);
  return out;
}

Tensor difference(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  auto o = out.data();
  auto d = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= d[i];
  return out;
}

}  // namespace

Perturbation deepfool(const Model& model, const Tensor& image, std::size_t max_iter, float overshoot,
                      DeepFoolNorm norm) {
  Perturbation out;
  out.method = PerturbationMethod::DeepFool;
  out.delta = Tensor(image.shape());
  if (max_iter == 0) return out;

  const int original = predict(model, image);
  const std::size_t k_count = model.classes();
  Tensor r_total(image.shape());
  Tensor candidate = image;
  std::vector<float> w(image.size());
  bool fooled = false;

  for (std::size_t it = 0; it < max_iter; ++it) {
    const LogitJacobian jac = logit_jacobian(model, candidate);
    if (argmax(jac.logits) != original) {
      fooled = true;
      break;
    }
    const auto g0 = jac.gradients[static_cast<std::size_t>(original)].data();
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_k = k_count;
    for (std::size_t k = 0; k < k_count; ++k) {
      if (static_cast<int>(k) == original) continue;
      const auto gk = jac.gradients[k].data();
      double dual = 0.0;
      for (std::size_t i = 0; i < gk.size(); ++i) {
        const double d = static_cast<double>(gk[i]) - g0[i];
        dual += norm == DeepFoolNorm::L2 ? d * d : std::abs(d);
      }
      if (dual <= 0.0) continue;
      if (norm == DeepFoolNorm::L2) dual = std::sqrt(dual);
      const double f = static_cast<double>(jac.logits[k]) - jac.logits[static_cast<std::size_t>(original)];
      const double dist = std::abs(f) / dual;
      if (dist < best) {
        best = dist;
        best_k = k;
      }
    }
    if (best_k == k_count) break;  // flat model: no boundary to move towards

    const auto gk = jac.gradients[best_k].data();
    double dual = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = gk[i] - g0[i];
      dual += norm == DeepFoolNorm::L2 ? static_cast<double>(w[i]) * w[i] : std::abs(static_cast<double>(w[i]));
    }
    const double f = static_cast<double>(jac.logits[best_k]) - jac.logits[static_cast<std::size_t>(original)];
    const double scale = std::abs(f) / dual;
    auto r = r_total.data();
    if (norm == DeepFoolNorm::L2) {
      for (std::size_t i = 0; i < r.size(); ++i) r[i] += static_cast<float>(scale * w[i]);
    } else {
      for (std::size_t i = 0; i < r.size(); ++i) r[i] += w[i] > 0.0f ? static_cast<float>(scale) : w[i] < 0.0f ? -static_cast<float>(scale) : 0.0f;
    }
    candidate = clipped_step(image, r_total, 1.0f + overshoot);
    out.iterations = it + 1;
  }
  if (!fooled && out.iterations > 0) fooled = predict(model, candidate) != original;

  out.delta = difference(candidate, image);
  out.budget = linf_norm(out.delta);
  out.succeeded = fooled;
  out.fooling_rate = fooled ? 1.0 : 0.0;
  return out;
}

Perturbation pgd(const Model& model, const Tensor& image, float eps, float step, std::size_t iters,
                 std::optional<int> away_from, const IterateObserver& observer) {
  if (!(eps > 0.0f)) throw std::invalid_argument("pgd: eps must be positive");
  Perturbation out;
  out.method = PerturbationMethod::Pgd;
  out.budget = eps;
  out.delta = Tensor(image.shape());
  const int label = away_from.value_or(predict(model, image));
  if (iters == 0) return out;

  Tensor delta(image.shape());
  for (std::size_t t = 1; t <= iters; ++t) {
    const Tensor x = add_clipped(image, delta);
    const Tensor g = input_gradient(model, x, CrossEntropyTarget{label});
    auto d = delta.data();
    auto gd = g.data();
    auto px = image.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const float sign = gd[i] > 0.0f ? 1.0f : (gd[i] < 0.0f ? -1.0f : 0.0f);
      float v = std::clamp(d[i] + step * sign, -eps, eps);
      d[i] = std::clamp(px[i] + v, 0.0f, 1.0f) - px[i];
    }
    if (observer) observer(t, delta);
  }
  out.delta = std::move(delta);
  out.iterations = iters;
  out.succeeded = predict(model, add_clipped(image, out.delta)) != label;
  out.fooling_rate = out.succeeded ? 1.0 : 0.0;
  return out;
}

Perturbation cw_lite(const Model& model, const Tensor& image, float confidence, std::size_t steps, float lr,
                     float c) {
  if (!(c > 0.0f)) throw std::invalid_argument("cw: c must be positive");
  Perturbation out;
  out.method = PerturbationMethod::CwLite;
  out.delta = Tensor(image.shape());
  if (steps == 0) return out;

  const int original = predict(model, image);
  const std::size_t n = image.size();
  const auto x0 = image.data();
  std::vector<double> w(n), m(n, 0.0), v(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = std::clamp(2.0 * x0[i] - 1.0, -1.0 + 1e-6, 1.0 - 1e-6);
    w[i] = std::atanh(y);
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  Tensor xa(image.shape());
  std::optional<Tensor> best;
  double best_dist = std::numeric_limits<double>::infinity();
  const std::size_t k = model.classes();
  for (std::size_t s = 1; s <= steps; ++s) {
    auto xd = xa.data();
    for (std::size_t i = 0; i < n; ++i) xd[i] = static_cast<float>((std::tanh(w[i]) + 1.0) / 2.0);

    GradientTape tape;
    Shape bs{1};
    bs.insert(bs.end(), image.shape().begin(), image.shape().end());
    const Tensor logits = model.forward(xa.reshaped(bs), tape);
    const auto z = logits.data();
    std::size_t runner_up = original == 0 ? 1 : 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (static_cast<int>(j) != original && z[j] > z[runner_up]) runner_up = j;
    }
    const double margin = static_cast<double>(z[static_cast<std::size_t>(original)]) - z[runner_up];
    double dist = 0.0;
    for (std::size_t i = 0; i < n; ++i) dist += (static_cast<double>(xd[i]) - x0[i]) * (xd[i] - x0[i]);
    if (argmax(z) != original && dist < best_dist) {
      best_dist = dist;
      best = difference(xa, image);
    }

    std::vector<double> grad(n);
    for (std::size_t i = 0; i < n; ++i) grad[i] = 2.0 * (static_cast<double>(xd[i]) - x0[i]);
    if (margin > -static_cast<double>(confidence)) {
      Tensor seed(logits.shape());
      seed[static_cast<std::size_t>(original)] = 1.0f;
      seed[runner_up] = -1.0f;
      const Tensor gz = model.backward(tape, seed);
      for (std::size_t i = 0; i < n; ++i) grad[i] += static_cast<double>(c) * gz[i];
    }
    const double b1t = 1.0 - std::pow(beta1, static_cast<double>(s));
    const double b2t = 1.0 - std::pow(beta2, static_cast<double>(s));
    for (std::size_t i = 0; i < n; ++i) {
      const double th = std::tanh(w[i]);
      const double gw = grad[i] * (1.0 - th * th) / 2.0;
      m[i] = beta1 * m[i] + (1.0 - beta1) * gw;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gw * gw;
      w[i] -= lr * (m[i] / b1t) / (std::sqrt(v[i] / b2t) + adam_eps);
    }
  }
  out.iterations = steps;
  if (best) {
    out.delta = std::move(*best);
    out.succeeded = true;
  } else {
    auto xd = xa.data();
    for (std::size_t i = 0; i < n; ++i) xd[i] = static_cast<float>((std::tanh(w[i]) + 1.0) / 2.0);
    out.delta = difference(xa, image);
    out.succeeded = predict(model, xa) != original;
  }
  out.fooling_rate = out.succeeded ? 1.0 : 0.0;
  out.budget = linf_norm(out.delta);
  return out;
}

void UapConfig::validate() const {
  if (!(xi > 0.0f && xi < 1.0f)) throw std::invalid_argument("uap: xi must be in (0, 1)");
  if (!(target_fooling_rate > 0.0 && target_fooling_rate <= 1.0)) {
    throw std::invalid_argument("uap: target fooling rate must be in (0, 1]");
  }
  if (max_passes == 0) throw std::invalid_argument("uap: max passes must be positive");
  if (!(overshoot >= 0.0f)) throw std::invalid_argument("uap: overshoot must be non-negative");
}

double fooling_rate(const Model& model, const Tensor& eta, const LabeledDataset& ds) {
  if (ds.empty()) return 0.0;
  const auto clean = predict_batch(model, ds.images);
  const auto perturbed = predict_batch(model, add_clipped(ds.images, eta));
  std::size_t changed = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) changed += clean[i] != perturbed[i] ? 1 : 0;
  return static_cast<double>(changed) / static_cast<double>(ds.size());
}

Perturbation generate_uap(const Model& model, const LabeledDataset& clean_set, const UapConfig& cfg,
                          const PassObserver& observer) {
  cfg.validate();
  if (clean_set.empty()) throw std::invalid_argument("uap: empty clean set");
  const InputSpec spec = clean_set.spec();
  Tensor eta(spec.shape());
  const auto clean_pred = predict_batch(model, clean_set.images);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(clean_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  Perturbation out;
  out.method = PerturbationMethod::Uap;
  out.budget = cfg.xi;
  for (std::size_t pass = 1; pass <= cfg.max_passes; ++pass) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const Tensor perturbed = add_clipped(clean_set.image(idx), eta);
      if (predict(model, perturbed) != clean_pred[idx]) continue;
      const Perturbation step = deepfool(model, perturbed, cfg.deepfool_max_iter, cfg.overshoot, cfg.inner_norm);
      if (!step.succeeded) continue;
      auto e = eta.data();
      auto d = step.delta.data();
      for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::clamp(e[i] + d[i], -cfg.xi, cfg.xi);
    }
    out.iterations = pass;
    const double rate = fooling_rate(model, eta, clean_set);
    if (observer) observer(pass, eta, rate);
    if (pass == 1 || rate > out.fooling_rate) {
      out.fooling_rate = rate;
      out.delta = eta;
    }
    if (rate >= cfg.target_fooling_rate) break;
  }
  if (out.delta.shape().empty()) out.delta = std::move(eta);
  out.succeeded = out.fooling_rate >= cfg.target_fooling_rate;
  return out;
}

void save_perturbation(const Perturbation& p, const std::filesystem::path& path) {
  ByteWriter w;
  w.bytes(std::string_view(kPerturbationMagic, sizeof kPerturbationMagic));
  w.u32(kPerturbationFormatVersion);
  w.u32(static_cast<std::uint32_t>(p.method));
  w.f32(p.budget);
  w.f64(p.fooling_rate);
  w.u32(p.succeeded ? 1u : 0u);
  w.u64(p.iterations);
  w.u32(static_cast<std::uint32_t>(p.delta.rank()));
  for (std::size_t d : p.delta.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.floats(p.delta.data());
  w.finish_to(path);
}

Perturbation load_perturbation(const std::filesystem::path& path) {
  ByteReader r = ByteReader::open_checked(path);
  if (r.bytes(sizeof kPerturbationMagic, "magic") !=
      std::string_view(kPerturbationMagic, sizeof kPerturbationMagic)) {
    throw FormatError("magic", "not a perturbation file");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kPerturbationFormatVersion) {
    throw FormatError("version", "unsupported perturbation format version " + std::to_string(version));
  }
  Perturbation p;
  const std::uint32_t method = r.u32("method");
  if (method > static_cast<std::uint32_t>(PerturbationMethod::Uap)) throw FormatError("method", "unknown method");
  p.method = static_cast<PerturbationMethod>(method);
  p.budget = r.f32("budget");
  p.fooling_rate = r.f64("fooling_rate");
  p.succeeded = r.u32("flags") != 0;
  p.iterations = r.u64("iterations");
  const std::uint32_t rank = r.u32("rank");
  if (rank > 8) throw FormatError("rank", "implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = r.u32("shape");
  auto values = r.floats(shape_size(shape), "delta");
  if (r.remaining() != 0) throw FormatError("delta", "trailing bytes");
  p.delta = Tensor(std::move(shape), std::move(values));
  return p;
}

}  // namespace uapguard
