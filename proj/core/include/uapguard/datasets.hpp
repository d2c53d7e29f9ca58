#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uapguard/nn.hpp"
#include "uapguard/tensor.hpp"

namespace uapguard {

/// Images (N, C, H, W) in [0, 1] with integer labels in [0, class_count).
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  InputSpec spec() const;
  std::size_t image_size() const;
  Tensor image(std::size_t i) const;
  std::span<const float> pixels(std::size_t i) const;

  /// Checks label range, label count and the [0, 1] pixel range.
  void validate() const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Throws FormatError naming the offending field.
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::string name = "idx");

/// Reads CIFAR-10 binary batches (3073-byte records, label then R, G, B planes).
LabeledDataset load_cifar10(std::span<const std::filesystem::path> batch_paths, std::string name = "cifar10");

/// Writers used to build fixtures; they quantise pixels to round(255 * v).
void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);
void write_cifar10(const LabeledDataset& ds, const std::filesystem::path& path);

/// Images at `indices`, in that order.
LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices);

/// Distinct random indices of length n. With `stratified`, class counts are
/// proportional to the source distribution (largest-remainder rounding).
std::vector<std::size_t> sample_indices(const LabeledDataset& ds, std::size_t n, std::uint64_t seed,
                                        bool stratified = false);

/// n images without replacement. Throws std::invalid_argument for n > size.
LabeledDataset subsample(const LabeledDataset& ds, std::size_t n, std::uint64_t seed, bool stratified = false);

/// Split sizes for `total` items: floor of each share, leftovers to the
/// largest fractional parts. Fractions must be non-negative and sum to 1.
std::vector<std::size_t> split_sizes(std::size_t total, std::span<const double> fractions);

/// Shuffled disjoint parts covering the whole dataset.
std::vector<LabeledDataset> split(const LabeledDataset& ds, std::span<const double> fractions, std::uint64_t seed);

/// Number of images per class.
std::vector<std::size_t> class_histogram(const LabeledDataset& ds);

}  // namespace uapguard
