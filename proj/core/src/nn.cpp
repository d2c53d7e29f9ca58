#include "uapguard/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "uapguard/errors.hpp"

namespace uapguard {

namespace {

Shape require_chw(const Shape& shape, const char* layer) {
  if (shape.size() != 3) {
    throw ShapeError(std::string(layer) + " expects a (C, H, W) input, got " + shape_string(shape));
  }
  return shape;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(Shape input_shape, std::size_t out_channels)
    : Layer(require_chw(input_shape, "conv2d")),
      channels_(input_shape[0]),
      height_(input_shape[1]),
      width_(input_shape[2]),
      out_channels_(out_channels) {
  params_.emplace_back(Shape{out_channels_, channels_ * kernel * kernel});
  params_.emplace_back(Shape{out_channels_});
}

Shape Conv2d::output_shape() const { return {out_channels_, height_, width_}; }

std::vector<std::uint32_t> Conv2d::manifest() const { return {static_cast<std::uint32_t>(out_channels_)}; }

void Conv2d::im2col(const float* image, float* col) const {
  const std::size_t hw = height_ * width_;
  for (std::size_t c = 0; c < channels_; ++c) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        float* row = col + ((c * kernel + ky) * kernel + kx) * hw;
        for (std::size_t y = 0; y < height_; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          float* dst = row + y * width_;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height_)) {
            std::fill(dst, dst + width_, 0.0f);
            continue;
          }
          const float* src = image + (c * height_ + static_cast<std::size_t>(sy)) * width_;
          for (std::size_t x = 0; x < width_; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            dst[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width_)) ? 0.0f : src[sx];
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const float* col, float* image) const {
  const std::size_t hw = height_ * width_;
  for (std::size_t c = 0; c < channels_; ++c) {
    for (std::size_t ky = 0; ky < kernel; ++ky) {
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const float* row = col + ((c * kernel + ky) * kernel + kx) * hw;
        for (std::size_t y = 0; y < height_; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height_)) continue;
          float* dst = image + (c * height_ + static_cast<std::size_t>(sy)) * width_;
          const float* src = row + y * width_;
          for (std::size_t x = 0; x < width_; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(width_)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

void Conv2d::forward(std::span<const float> in, std::span<float> out, std::size_t batch) const {
  const std::size_t hw = height_ * width_;
  const std::size_t k_size = channels_ * kernel * kernel;
  const std::size_t in_stride = channels_ * hw;
  const std::size_t out_stride = out_channels_ * hw;
  const float* weight = params_[0].data().data();
  const float* bias = params_[1].data().data();
  std::vector<float> col(k_size * hw);
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(in.data() + n * in_stride, col.data());
    float* dst = out.data() + n * out_stride;
    for (std::size_t oc = 0; oc < out_channels_; ++oc) {
      float* o = dst + oc * hw;
      std::fill(o, o + hw, bias[oc]);
      const float* w = weight + oc * k_size;
      for (std::size_t k = 0; k < k_size; ++k) {
        const float wk = w[k];
        const float* c = col.data() + k * hw;
        for (std::size_t p = 0; p < hw; ++p) o[p] += wk * c[p];
      }
    }
  }
}

void Conv2d::backward(std::span<const float> in, std::span<const float> /*out*/,
                      std::span<const float> grad_out, std::span<float> grad_in,
                      std::span<Tensor> param_grads, std::size_t batch) const {
  const std::size_t hw = height_ * width_;
  const std::size_t k_size = channels_ * kernel * kernel;
  const std::size_t in_stride = channels_ * hw;
  const std::size_t out_stride = out_channels_ * hw;
  const float* weight = params_[0].data().data();
  const bool want_params = !param_grads.empty();
  float* gw = want_params ? param_grads[0].data().data() : nullptr;
  float* gb = want_params ? param_grads[1].data().data() : nullptr;

  std::vector<float> col(k_size * hw);
  std::vector<float> gcol(k_size * hw);
  std::fill(grad_in.begin(), grad_in.end(), 0.0f);
  for (std::size_t n = 0; n < batch; ++n) {
    const float* g = grad_out.data() + n * out_stride;
    if (want_params) {
      im2col(in.data() + n * in_stride, col.data());
      for (std::size_t oc = 0; oc < out_channels_; ++oc) {
        const float* go = g + oc * hw;
        float bsum = 0.0f;
        for (std::size_t p = 0; p < hw; ++p) bsum += go[p];
        gb[oc] += bsum;
        float* gwo = gw + oc * k_size;
        for (std::size_t k = 0; k < k_size; ++k) {
          const float* c = col.data() + k * hw;
          float acc = 0.0f;
          for (std::size_t p = 0; p < hw; ++p) acc += go[p] * c[p];
          gwo[k] += acc;
        }
      }
    }
    std::fill(gcol.begin(), gcol.end(), 0.0f);
    for (std::size_t oc = 0; oc < out_channels_; ++oc) {
      const float* go = g + oc * hw;
      const float* w = weight + oc * k_size;
      for (std::size_t k = 0; k < k_size; ++k) {
        const float wk = w[k];
        float* gc = gcol.data() + k * hw;
        for (std::size_t p = 0; p < hw; ++p) gc[p] += wk * go[p];
      }
    }
    col2im(gcol.data(), grad_in.data() + n * in_stride);
  }
}

// ---------------------------------------------------------------- Relu

void Relu::forward(std::span<const float> in, std::span<float> out, std::size_t /*batch*/) const {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
}

void Relu::backward(std::span<const float> in, std::span<const float> /*out*/,
                    std::span<const float> grad_out, std::span<float> grad_in, std::span<Tensor> /*param_grads*/,
                    std::size_t /*batch*/) const {
  for (std::size_t i = 0; i < in.size(); ++i) grad_in[i] = in[i] > 0.0f ? grad_out[i] : 0.0f;
}

// ---------------------------------------------------------------- MaxPool2

MaxPool2::MaxPool2(Shape input_shape) : Layer(require_chw(input_shape, "maxpool")) {
  if (input_shape[1] % 2 != 0 || input_shape[2] % 2 != 0) {
    throw ShapeError("maxpool expects even spatial dims, got " + shape_string(input_shape));
  }
}

Shape MaxPool2::output_shape() const {
  const Shape& s = input_shape();
  return {s[0], s[1] / 2, s[2] / 2};
}

void MaxPool2::forward(std::span<const float> in, std::span<float> out, std::size_t batch) const {
  const Shape& s = input_shape();
  const std::size_t planes = batch * s[0];
  const std::size_t h = s[1], w = s[2], oh = h / 2, ow = w / 2;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const float* src = in.data() + pl * h * w;
    float* dst = out.data() + pl * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const float* r0 = src + 2 * y * w;
      const float* r1 = r0 + w;
      for (std::size_t x = 0; x < ow; ++x) {
        dst[y * ow + x] = std::max(std::max(r0[2 * x], r0[2 * x + 1]), std::max(r1[2 * x], r1[2 * x + 1]));
      }
    }
  }
}

void MaxPool2::backward(std::span<const float> in, std::span<const float> /*out*/,
                        std::span<const float> grad_out, std::span<float> grad_in,
                        std::span<Tensor> /*param_grads*/, std::size_t batch) const {
  const Shape& s = input_shape();
  const std::size_t planes = batch * s[0];
  const std::size_t h = s[1], w = s[2], oh = h / 2, ow = w / 2;
  std::fill(grad_in.begin(), grad_in.end(), 0.0f);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const float* src = in.data() + pl * h * w;
    float* gsrc = grad_in.data() + pl * h * w;
    const float* g = grad_out.data() + pl * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        // first maximum in row-major window order receives the gradient
        const std::size_t cand[4] = {2 * y * w + 2 * x, 2 * y * w + 2 * x + 1, (2 * y + 1) * w + 2 * x,
                                     (2 * y + 1) * w + 2 * x + 1};
        std::size_t best = cand[0];
        for (std::size_t c = 1; c < 4; ++c) {
          if (src[cand[c]] > src[best]) best = cand[c];
        }
        gsrc[best] += g[y * ow + x];
      }
    }
  }
}

// ---------------------------------------------------------------- Dense

Dense::Dense(Shape input_shape, std::size_t out_features)
    : Layer(std::move(input_shape)), in_features_(shape_size(this->input_shape())), out_features_(out_features) {
  params_.emplace_back(Shape{out_features_, in_features_});
  params_.emplace_back(Shape{out_features_});
}

void Dense::forward(std::span<const float> in, std::span<float> out, std::size_t batch) const {
  const float* weight = params_[0].data().data();
  const float* bias = params_[1].data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    const float* x = in.data() + n * in_features_;
    float* y = out.data() + n * out_features_;
    for (std::size_t o = 0; o < out_features_; ++o) {
      const float* w = weight + o * in_features_;
      float acc = 0.0f;
      for (std::size_t d = 0; d < in_features_; ++d) acc += w[d] * x[d];
      y[o] = acc + bias[o];
    }
  }
}

void Dense::backward(std::span<const float> in, std::span<const float> /*out*/,
                     std::span<const float> grad_out, std::span<float> grad_in, std::span<Tensor> param_grads,
                     std::size_t batch) const {
  const float* weight = params_[0].data().data();
  const bool want_params = !param_grads.empty();
  std::fill(grad_in.begin(), grad_in.end(), 0.0f);
  for (std::size_t n = 0; n < batch; ++n) {
    const float* x = in.data() + n * in_features_;
    const float* g = grad_out.data() + n * out_features_;
    float* gx = grad_in.data() + n * in_features_;
    for (std::size_t o = 0; o < out_features_; ++o) {
      const float go = g[o];
      if (go == 0.0f) continue;
      const float* w = weight + o * in_features_;
      for (std::size_t d = 0; d < in_features_; ++d) gx[d] += go * w[d];
      if (want_params) {
        float* gw = param_grads[0].data().data() + o * in_features_;
        for (std::size_t d = 0; d < in_features_; ++d) gw[d] += go * x[d];
        param_grads[1][o] += go;
      }
    }
  }
}

// ---------------------------------------------------------------- Model

Model::Model(const Model& other) : input_(other.input_), classes_(other.classes_) {
  layers_.reserve(other.layers_.size());
  for (const auto& layer : other.layers_) layers_.push_back(layer->clone());
}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Shape Model::output_shape() const { return layers_.empty() ? input_.shape() : layers_.back()->output_shape(); }

void Model::add(std::unique_ptr<Layer> layer) {
  if (layer->input_shape() != output_shape()) {
    throw ShapeError("layer input " + shape_string(layer->input_shape()) + " does not follow " +
                     shape_string(output_shape()));
  }
  layers_.push_back(std::move(layer));
}

std::size_t Model::check_batch(const Tensor& batch) const {
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[1] != input_.channels || s[2] != input_.height || s[3] != input_.width) {
    throw ShapeError("model expects (N, " + std::to_string(input_.channels) + ", " +
                     std::to_string(input_.height) + ", " + std::to_string(input_.width) + "), got " +
                     shape_string(s));
  }
  if (output_shape() != Shape{classes_}) {
    throw ShapeError("model output " + shape_string(output_shape()) + " does not produce " +
                     std::to_string(classes_) + " logits");
  }
  return s[0];
}

Tensor Model::forward(const Tensor& batch) const {
  const std::size_t n = check_batch(batch);
  Tensor current = batch;
  for (const auto& layer : layers_) {
    Shape out_shape{n};
    const Shape per = layer->output_shape();
    out_shape.insert(out_shape.end(), per.begin(), per.end());
    Tensor next(std::move(out_shape));
    layer->forward(current.data(), next.data(), n);
    current = std::move(next);
  }
  return current.reshaped({n, classes_});
}

Tensor Model::forward(const Tensor& batch, GradientTape& tape) const {
  const std::size_t n = check_batch(batch);
  tape.batch_ = n;
  tape.activations_.clear();
  tape.activations_.reserve(layers_.size() + 1);
  tape.activations_.push_back(batch);
  for (const auto& layer : layers_) {
    Shape out_shape{n};
    const Shape per = layer->output_shape();
    out_shape.insert(out_shape.end(), per.begin(), per.end());
    Tensor next(std::move(out_shape));
    layer->forward(tape.activations_.back().data(), next.data(), n);
    tape.activations_.push_back(std::move(next));
  }
  return tape.activations_.back().reshaped({n, classes_});
}

Tensor Model::backward(const GradientTape& tape, const Tensor& grad_logits, std::vector<Tensor>* param_grads) const {
  if (tape.activations_.size() != layers_.size() + 1) {
    throw std::invalid_argument("gradient tape was not recorded by this model");
  }
  if (grad_logits.shape() != Shape{tape.batch_, classes_}) {
    throw ShapeError("logit gradient " + shape_string(grad_logits.shape()) + " does not match batch");
  }
  std::vector<std::span<Tensor>> grads_by_layer(layers_.size());
  if (param_grads) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::size_t count = layers_[i]->parameters().size();
      if (offset + count > param_grads->size()) throw std::invalid_argument("parameter gradient list too short");
      grads_by_layer[i] = std::span<Tensor>(param_grads->data() + offset, count);
      offset += count;
    }
  }
  Tensor grad = grad_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Tensor& in = tape.activations_[i];
    Tensor grad_in(in.shape());
    layers_[i]->backward(in.data(), tape.activations_[i + 1].data(), grad.data(), grad_in.data(),
                         grads_by_layer[i], tape.batch_);
    grad = std::move(grad_in);
  }
  return grad;
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : layers_) {
    for (Tensor& p : layer->parameters()) out.push_back(&p);
  }
  return out;
}

std::vector<const Tensor*> Model::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& layer : layers_) {
    for (const Tensor& p : std::as_const(*layer).parameters()) out.push_back(&p);
  }
  return out;
}

std::vector<Tensor> Model::zero_gradients() const {
  std::vector<Tensor> out;
  for (const Tensor* p : parameters()) out.emplace_back(p->shape());
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

// ---------------------------------------------------------------- helpers

int argmax(std::span<const float> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

int predict(const Model& model, const Tensor& image) {
  Shape s{1};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  const Tensor logits = model.forward(image.reshaped(std::move(s)));
  return argmax(logits.data());
}

std::vector<int> predict_batch(const Model& model, const Tensor& batch, std::size_t chunk) {
  if (batch.rank() == 0) throw ShapeError("predict_batch expects a batch");
  const std::size_t n = batch.dim(0);
  const std::size_t k = model.classes();
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t first = 0; first < n; first += chunk) {
    const std::size_t count = std::min(chunk, n - first);
    const Tensor logits = model.forward(batch.slice(first, count));
    for (std::size_t i = 0; i < count; ++i) out.push_back(argmax(logits.data().subspan(i * k, k)));
  }
  return out;
}

std::vector<double> softmax_row(std::span<const float> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross-entropy: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (grad) *grad = Tensor(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.data().subspan(i * k, k);
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) throw std::invalid_argument("label out of range");
    const double m = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (float z : row) sum += std::exp(static_cast<double>(z) - m);
    const double log_sum = std::log(sum) + m;
    total += log_sum - row[static_cast<std::size_t>(label)];
    if (grad) {
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(static_cast<double>(row[j]) - log_sum);
        (*grad)[i * k + j] = static_cast<float>((p - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) / n);
      }
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

namespace {

Tensor as_batch(const Tensor& image) {
  Shape s{1};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  return image.reshaped(std::move(s));
}

void check_class(const Model& model, int k) {
  if (k < 0 || static_cast<std::size_t>(k) >= model.classes()) {
    throw std::invalid_argument("class index " + std::to_string(k) + " outside [0, " +
                                std::to_string(model.classes()) + ")");
  }
}

}  // namespace

Tensor input_gradient(const Model& model, const Tensor& image, const LossTarget& target) {
  if (const auto* ce = std::get_if<CrossEntropyTarget>(&target)) check_class(model, ce->label);
  if (const auto* ld = std::get_if<LogitDifferenceTarget>(&target)) {
    check_class(model, ld->positive);
    check_class(model, ld->negative);
  }
  GradientTape tape;
  const Tensor logits = model.forward(as_batch(image), tape);
  Tensor seed(logits.shape());
  if (const auto* ce = std::get_if<CrossEntropyTarget>(&target)) {
    const int label = ce->label;
    softmax_cross_entropy(logits, std::span<const int>(&label, 1), &seed);
  } else {
    const auto& ld = std::get<LogitDifferenceTarget>(target);
    seed[static_cast<std::size_t>(ld.positive)] += 1.0f;
    seed[static_cast<std::size_t>(ld.negative)] -= 1.0f;
  }
  return model.backward(tape, seed).reshaped(image.shape());
}

LogitJacobian logit_jacobian(const Model& model, const Tensor& image) {
  GradientTape tape;
  const Tensor logits = model.forward(as_batch(image), tape);
  LogitJacobian out;
  out.logits.assign(logits.data().begin(), logits.data().end());
  out.gradients.reserve(model.classes());
  for (std::size_t k = 0; k < model.classes(); ++k) {
    Tensor seed(logits.shape());
    seed[k] = 1.0f;
    out.gradients.push_back(model.backward(tape, seed).reshaped(image.shape()));
  }
  return out;
}

}  // namespace uapguard
