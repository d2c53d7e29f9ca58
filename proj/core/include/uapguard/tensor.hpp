#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace uapguard {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float tensor. Images use (C, H, W), batches (N, C, H, W).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  /// Throws ShapeError when the data length does not match the shape.
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Same data, new shape of identical element count.
  Tensor reshaped(Shape shape) const;

  /// Slice `count` consecutive items along the leading axis.
  Tensor slice(std::size_t first, std::size_t count) const;

  /// Sample `index` along the leading axis, with that axis dropped.
  Tensor item(std::size_t index) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Stack equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

/// Largest absolute element; 0 for an empty tensor.
float linf_norm(const Tensor& t);

/// Element-wise clamp into [-radius, radius]. Throws std::invalid_argument for radius <= 0.
Tensor project_linf(const Tensor& t, float radius);

/// clip(image + delta, 0, 1). `delta` is broadcast over the batch axis when
/// `image` has one more leading dimension.
Tensor add_clipped(const Tensor& image, const Tensor& delta);

void clip_unit(std::span<float> values);

bool all_finite(const Tensor& t);

}  // namespace uapguard
