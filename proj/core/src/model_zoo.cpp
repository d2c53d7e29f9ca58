#include "uapguard/model_zoo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string_view>

#include "uapguard/binary_io.hpp"
#include "uapguard/errors.hpp"

namespace uapguard {

namespace {

void he_normal(Layer& layer, std::mt19937_64& rng) {
  auto params = layer.parameters();
  if (params.empty()) return;
  Tensor& weight = params[0];
  const double fan_in = static_cast<double>(weight.dim(1));
  std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
  for (float& w : weight.data()) w = dist(rng);
}

}  // namespace

Model make_small_cnn(InputSpec input, std::size_t classes, std::uint64_t seed, SmallCnnOptions options) {
  Model model(input, classes);
  model.emplace<Conv2d>(options.conv1_channels);
  model.emplace<Relu>();
  model.emplace<MaxPool2>();
  model.emplace<Conv2d>(options.conv2_channels);
  model.emplace<Relu>();
  model.emplace<MaxPool2>();
  model.emplace<Dense>(options.hidden);
  model.emplace<Relu>();
  model.emplace<Dense>(classes);

  std::mt19937_64 rng(seed);
  for (const auto& layer : model.layers()) he_normal(*layer, rng);
  return model;
}

Model make_linear(InputSpec input, std::size_t classes, std::optional<std::uint64_t> seed) {
  Model model(input, classes);
  model.emplace<Dense>(classes);
  if (seed) {
    std::mt19937_64 rng(*seed);
    for (const auto& layer : model.layers()) he_normal(*layer, rng);
  }
  return model;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train: epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  if (!(learning_rate >= 0.0f)) throw std::invalid_argument("train: learning rate must be non-negative");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0f)) throw std::invalid_argument("train: weight decay must be non-negative");
}

TrainResult train(Model model, const LabeledDataset& ds, const TrainConfig& cfg, const LabeledDataset* heldout) {
  cfg.validate();
  if (ds.empty()) throw std::invalid_argument("train: empty dataset");
  if (ds.spec() != model.input()) throw ShapeError("train: dataset images do not match the model input");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto params = model.parameters();
  std::vector<Tensor> velocity = model.zero_gradients();
  const InputSpec spec = model.input();
  const std::size_t stride = spec.size();

  TrainResult result{Model(spec, model.classes()), {}};
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - first);
      std::vector<float> pixels;
      pixels.reserve(count * stride);
      std::vector<int> labels;
      labels.reserve(count);
      for (std::size_t i = first; i < first + count; ++i) {
        const auto px = ds.pixels(order[i]);
        pixels.insert(pixels.end(), px.begin(), px.end());
        labels.push_back(ds.labels[order[i]]);
      }
      const Tensor batch({count, spec.channels, spec.height, spec.width}, std::move(pixels));

      GradientTape tape;
      const Tensor logits = model.forward(batch, tape);
      Tensor grad_logits;
      const double loss = softmax_cross_entropy(logits, labels, &grad_logits);
      if (!std::isfinite(loss)) throw TrainingError(epoch, "loss diverged");
      loss_sum += loss * static_cast<double>(count);

      std::vector<Tensor> grads = model.zero_gradients();
      model.backward(tape, grad_logits, &grads);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto w = params[p]->data();
        auto g = grads[p].data();
        auto v = velocity[p].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * w[i];
          w[i] -= cfg.learning_rate * v[i];
        }
      }
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(ds.size());
    if (!std::isfinite(stats.train_loss)) throw TrainingError(epoch, "loss diverged");
    for (const Tensor* p : std::as_const(model).parameters()) {
      if (!all_finite(*p)) throw TrainingError(epoch, "parameters diverged");
    }
    if (heldout) stats.heldout_accuracy = evaluate(model, *heldout);
    result.history.push_back(stats);
  }
  result.model = std::move(model);
  return result;
}

double evaluate(const Model& model, const LabeledDataset& ds) {
  if (ds.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const auto pred = predict_batch(model, ds.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ds.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

void save_model(const Model& model, const std::filesystem::path& path) {
  ByteWriter w;
  w.bytes(std::string_view(kModelMagic, sizeof kModelMagic));
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.input().channels));
  w.u32(static_cast<std::uint32_t>(model.input().height));
  w.u32(static_cast<std::uint32_t>(model.input().width));
  w.u32(static_cast<std::uint32_t>(model.classes()));
  w.u32(static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& layer : model.layers()) {
    w.u32(static_cast<std::uint32_t>(layer->kind()));
    const auto manifest = layer->manifest();
    w.u32(static_cast<std::uint32_t>(manifest.size()));
    for (std::uint32_t v : manifest) w.u32(v);
  }
  w.u64(model.parameter_count());
  for (const Tensor* p : model.parameters()) w.floats(p->data());
  w.finish_to(path);
}

Model load_model(const std::filesystem::path& path) {
  ByteReader r = ByteReader::open_checked(path);
  if (r.bytes(sizeof kModelMagic, "magic") != std::string_view(kModelMagic, sizeof kModelMagic)) {
    throw FormatError("magic", "not a model file");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kModelFormatVersion) {
    throw FormatError("version", "unsupported model format version " + std::to_string(version));
  }
  InputSpec input;
  input.channels = r.u32("input.channels");
  input.height = r.u32("input.height");
  input.width = r.u32("input.width");
  const std::size_t classes = r.u32("classes");
  const std::uint32_t layer_count = r.u32("layers.count");
  Model model(input, classes);
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    const std::string field = "layers[" + std::to_string(i) + "]";
    const auto kind = static_cast<LayerKind>(r.u32(field + ".kind"));
    const std::uint32_t n = r.u32(field + ".manifest");
    std::vector<std::uint32_t> manifest(n);
    for (auto& v : manifest) v = r.u32(field + ".manifest");
    auto need_args = [&](std::size_t want) {
      if (manifest.size() != want) throw FormatError(field, "bad manifest length");
    };
    switch (kind) {
      case LayerKind::Conv2d:
        need_args(1);
        model.emplace<Conv2d>(manifest[0]);
        break;
      case LayerKind::Relu:
        need_args(0);
        model.emplace<Relu>();
        break;
      case LayerKind::MaxPool2:
        need_args(0);
        model.emplace<MaxPool2>();
        break;
      case LayerKind::Dense:
        need_args(1);
        model.emplace<Dense>(manifest[0]);
        break;
      default:
        throw FormatError(field + ".kind", "unknown layer kind");
    }
  }
  if (model.output_shape() != Shape{classes}) throw FormatError("layers", "network does not end in " +
                                                                              std::to_string(classes) + " logits");
  const std::uint64_t count = r.u64("parameters.count");
  if (count != model.parameter_count()) throw FormatError("parameters.count", "does not match the layer manifest");
  for (Tensor* p : model.parameters()) {
    const auto values = r.floats(p->size(), "parameters");
    std::copy(values.begin(), values.end(), p->data().begin());
  }
  if (r.remaining() != 0) throw FormatError("parameters", "trailing bytes");
  return model;
}

}  // namespace uapguard
