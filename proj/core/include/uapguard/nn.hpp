#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "uapguard/tensor.hpp"

namespace uapguard {

enum class LayerKind : std::uint32_t { Conv2d = 1, Relu = 2, MaxPool2 = 3, Dense = 4 };

/// One stage of a sequential network operating on batches of samples.
///
/// Shapes passed around here are per-sample; the batch size is an explicit
/// argument and data is laid out as `batch` consecutive samples.
class Layer {
 public:
  explicit Layer(Shape input_shape) : input_shape_(std::move(input_shape)) {}
  virtual ~Layer() = default;

  virtual LayerKind kind() const noexcept = 0;
  virtual Shape output_shape() const = 0;
  const Shape& input_shape() const noexcept { return input_shape_; }

  virtual void forward(std::span<const float> in, std::span<float> out, std::size_t batch) const = 0;

  /// Writes d(loss)/d(in) into `grad_in` and, when `param_grads` is non-empty,
  /// accumulates parameter gradients into it (same order as parameters()).
  virtual void backward(std::span<const float> in, std::span<const float> out,
                        std::span<const float> grad_out, std::span<float> grad_in,
                        std::span<Tensor> param_grads, std::size_t batch) const = 0;

  virtual std::span<Tensor> parameters() noexcept { return {}; }
  virtual std::span<const Tensor> parameters() const noexcept { return {}; }

  /// Integers that, together with kind(), rebuild this layer (see model_io).
  virtual std::vector<std::uint32_t> manifest() const = 0;

  virtual std::unique_ptr<Layer> clone() const = 0;

 private:
  Shape input_shape_;
};

/// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
class Conv2d final : public Layer {
 public:
  Conv2d(Shape input_shape, std::size_t out_channels);

  LayerKind kind() const noexcept override { return LayerKind::Conv2d; }
  Shape output_shape() const override;
  void forward(std::span<const float> in, std::span<float> out, std::size_t batch) const override;
  void backward(std::span<const float> in, std::span<const float> out, std::span<const float> grad_out,
                std::span<float> grad_in, std::span<Tensor> param_grads, std::size_t batch) const override;
  std::span<Tensor> parameters() noexcept override { return params_; }
  std::span<const Tensor> parameters() const noexcept override { return params_; }
  std::vector<std::uint32_t> manifest() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  static constexpr std::size_t kernel = 3;

 private:
  void im2col(const float* image, float* col) const;
  void col2im(const float* col, float* image) const;

  std::size_t channels_, height_, width_, out_channels_;
  std::vector<Tensor> params_;  // weight (out, in*9), bias (out)
};

class Relu final : public Layer {
 public:
  using Layer::Layer;

  LayerKind kind() const noexcept override { return LayerKind::Relu; }
  Shape output_shape() const override { return input_shape(); }
  void forward(std::span<const float> in, std::span<float> out, std::size_t batch) const override;
  void backward(std::span<const float> in, std::span<const float> out, std::span<const float> grad_out,
                std::span<float> grad_in, std::span<Tensor> param_grads, std::size_t batch) const override;
  std::vector<std::uint32_t> manifest() const override { return {}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
};

/// 2x2 max pooling with stride 2; spatial dims must be even.
class MaxPool2 final : public Layer {
 public:
  explicit MaxPool2(Shape input_shape);

  LayerKind kind() const noexcept override { return LayerKind::MaxPool2; }
  Shape output_shape() const override;
  void forward(std::span<const float> in, std::span<float> out, std::size_t batch) const override;
  void backward(std::span<const float> in, std::span<const float> out, std::span<const float> grad_out,
                std::span<float> grad_in, std::span<Tensor> param_grads, std::size_t batch) const override;
  std::vector<std::uint32_t> manifest() const override { return {}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2>(*this); }
};

/// Fully connected layer over the flattened per-sample input.
class Dense final : public Layer {
 public:
  Dense(Shape input_shape, std::size_t out_features);

  LayerKind kind() const noexcept override { return LayerKind::Dense; }
  Shape output_shape() const override { return {out_features_}; }
  void forward(std::span<const float> in, std::span<float> out, std::size_t batch) const override;
  void backward(std::span<const float> in, std::span<const float> out, std::span<const float> grad_out,
                std::span<float> grad_in, std::span<Tensor> param_grads, std::size_t batch) const override;
  std::span<Tensor> parameters() noexcept override { return params_; }
  std::span<const Tensor> parameters() const noexcept override { return params_; }
  std::vector<std::uint32_t> manifest() const override {
    return {static_cast<std::uint32_t>(out_features_)};
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

 private:
  std::size_t in_features_, out_features_;
  std::vector<Tensor> params_;  // weight (out, in), bias (out)
};

/// Activations recorded by one forward pass, consumed by Model::backward.
///
/// A tape belongs to a single call chain and is never shared between threads.
class GradientTape {
 public:
  std::size_t batch() const noexcept { return batch_; }
  std::size_t node_count() const noexcept { return activations_.empty() ? 0 : activations_.size() - 1; }
  const Tensor& activation(std::size_t i) const { return activations_.at(i); }

 private:
  friend class Model;
  std::size_t batch_ = 0;
  std::vector<Tensor> activations_;  // [0] = input, [i + 1] = output of layer i
};

struct InputSpec {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  Shape shape() const { return {channels, height, width}; }
  std::size_t size() const { return channels * height * width; }
  friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

/// Sequential classifier producing raw logits.
class Model {
 public:
  Model(InputSpec input, std::size_t classes) : input_(input), classes_(classes) {}
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  ~Model() = default;

  /// Appends a layer; its input shape must equal the current output shape.
  void add(std::unique_ptr<Layer> layer);

  template <class L, class... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(output_shape(), std::forward<Args>(args)...);
    L& ref = *layer;
    add(std::move(layer));
    return ref;
  }

  /// Logits of shape (N, classes) for a batch of shape (N, C, H, W).
  Tensor forward(const Tensor& batch) const;
  Tensor forward(const Tensor& batch, GradientTape& tape) const;

  /// Back-propagates `grad_logits` (N, classes) through the recorded tape and
  /// returns the gradient with respect to the input batch. Parameter
  /// gradients are accumulated into `param_grads` when given.
  Tensor backward(const GradientTape& tape, const Tensor& grad_logits,
                  std::vector<Tensor>* param_grads = nullptr) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<Tensor> zero_gradients() const;
  std::size_t parameter_count() const;

  const InputSpec& input() const noexcept { return input_; }
  std::size_t classes() const noexcept { return classes_; }
  const std::vector<std::unique_ptr<Layer>>& layers() const noexcept { return layers_; }
  Shape output_shape() const;

 private:
  std::size_t check_batch(const Tensor& batch) const;

  InputSpec input_;
  std::size_t classes_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// argmax with the lowest index winning ties.
int argmax(std::span<const float> values);

/// Predicted class of a single (C, H, W) image.
int predict(const Model& model, const Tensor& image);

/// Predicted classes of a batch, evaluated in chunks of `chunk` samples.
std::vector<int> predict_batch(const Model& model, const Tensor& batch, std::size_t chunk = 256);

/// Softmax of each row of (N, K) logits, computed with max subtraction in double.
std::vector<double> softmax_row(std::span<const float> logits);

/// Mean softmax cross-entropy over the batch; fills `grad` (same shape as logits).
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad);

struct CrossEntropyTarget {
  int label;
};

/// Scalar z[positive] - z[negative].
struct LogitDifferenceTarget {
  int positive;
  int negative;
};

using LossTarget = std::variant<CrossEntropyTarget, LogitDifferenceTarget>;

/// Gradient of the chosen scalar with respect to a single (C, H, W) image.
/// Throws std::invalid_argument for class indices outside [0, classes).
Tensor input_gradient(const Model& model, const Tensor& image, const LossTarget& target);

struct LogitJacobian {
  std::vector<float> logits;
  std::vector<Tensor> gradients;  // gradients[k] = d logits[k] / d image
};

/// Logits and per-class input gradients of one image, sharing a single forward pass.
LogitJacobian logit_jacobian(const Model& model, const Tensor& image);

}  // namespace uapguard
