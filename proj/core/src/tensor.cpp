#include "uapguard/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "uapguard/errors.hpp"

namespace uapguard {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice(std::size_t first, std::size_t count) const {
  if (shape_.empty() || first + count > shape_[0]) {
    throw ShapeError("slice out of range for " + shape_string(shape_));
  }
  Shape out_shape = shape_;
  out_shape[0] = count;
  const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
  std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(first * stride),
                         data_.begin() + static_cast<std::ptrdiff_t>((first + count) * stride));
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor Tensor::item(std::size_t index) const {
  Tensor one = slice(index, 1);
  return one.reshaped(Shape(shape_.begin() + 1, shape_.end()));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("cannot stack zero tensors");
  const Shape& inner = items.front().shape();
  Shape out_shape{items.size()};
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  std::vector<float> out;
  out.reserve(shape_size(out_shape));
  for (const Tensor& t : items) {
    if (t.shape() != inner) {
      throw ShapeError("stack: " + shape_string(t.shape()) + " vs " + shape_string(inner));
    }
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(out_shape), std::move(out));
}

float linf_norm(const Tensor& t) {
  float m = 0.0f;
  for (float v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

Tensor project_linf(const Tensor& t, float radius) {
  if (!(radius > 0.0f)) throw std::invalid_argument("project_linf: radius must be positive");
  Tensor out = t;
  for (float& v : out.data()) v = std::clamp(v, -radius, radius);
  return out;
}

void clip_unit(std::span<float> values) {
  for (float& v : values) v = std::clamp(v, 0.0f, 1.0f);
}

Tensor add_clipped(const Tensor& image, const Tensor& delta) {
  const bool same = image.shape() == delta.shape();
  const bool batched = image.rank() == delta.rank() + 1 &&
                       std::equal(delta.shape().begin(), delta.shape().end(), image.shape().begin() + 1);
  if (!same && !batched) {
    throw ShapeError("perturbation " + shape_string(delta.shape()) + " does not match image " +
                     shape_string(image.shape()));
  }
  Tensor out = image;
  auto dst = out.data();
  auto d = delta.data();
  const std::size_t n = d.size();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::clamp(dst[i] + d[i % n], 0.0f, 1.0f);
  return out;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](float v) { return std::isfinite(v); });
}

}  // namespace uapguard
