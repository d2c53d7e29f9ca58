#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace uapguard {

/// Tensor or image shapes that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed on-disk data (IDX, CIFAR-10 batches, model or perturbation blobs).
class FormatError : public std::runtime_error {
 public:
  FormatError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Training produced a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t epoch, const std::string& message)
      : std::runtime_error("epoch " + std::to_string(epoch) + ": " + message), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

/// A perturbation failed the fooling-rate gate and may not drive the detector.
class GateError : public std::runtime_error {
 public:
  GateError(double fooling_rate, double threshold)
      : std::runtime_error("perturbation fooling rate " + std::to_string(fooling_rate) +
                           " is below the gate threshold " + std::to_string(threshold)),
        fooling_rate_(fooling_rate),
        threshold_(threshold) {}

  double fooling_rate() const noexcept { return fooling_rate_; }
  double threshold() const noexcept { return threshold_; }

 private:
  double fooling_rate_;
  double threshold_;
};

}  // namespace uapguard
