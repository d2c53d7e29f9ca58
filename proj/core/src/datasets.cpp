#include "uapguard/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <stdexcept>

#include "uapguard/errors.hpp"

namespace uapguard {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path, const std::string& field) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(field, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& field) {
  if (offset + 4 > bytes.size()) throw FormatError(field, "truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

std::uint8_t quantise(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

InputSpec LabeledDataset::spec() const {
  if (images.rank() != 4) return {};
  return {images.dim(1), images.dim(2), images.dim(3)};
}

std::size_t LabeledDataset::image_size() const { return spec().size(); }

Tensor LabeledDataset::image(std::size_t i) const { return images.item(i); }

std::span<const float> LabeledDataset::pixels(std::size_t i) const {
  const std::size_t n = image_size();
  return images.data().subspan(i * n, n);
}

void LabeledDataset::validate() const {
  if (images.rank() != 4) throw ShapeError("dataset images must be (N, C, H, W)");
  if (images.dim(0) != labels.size()) {
    throw ShapeError("dataset holds " + std::to_string(images.dim(0)) + " images but " +
                     std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
      throw std::invalid_argument("label " + std::to_string(l) + " outside [0, " + std::to_string(class_count) + ")");
    }
  }
  for (float v : images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("pixel outside [0, 1]");
  }
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::string name) {
  const auto img = read_file(images_path, "images");
  const auto lab = read_file(labels_path, "labels");

  if (read_be32(img, 0, "images.magic") != kIdxImageMagic) {
    throw FormatError("images.magic", "expected 0x00000803");
  }
  if (read_be32(lab, 0, "labels.magic") != kIdxLabelMagic) {
    throw FormatError("labels.magic", "expected 0x00000801");
  }
  const std::size_t n = read_be32(img, 4, "images.count");
  const std::size_t rows = read_be32(img, 8, "images.rows");
  const std::size_t cols = read_be32(img, 12, "images.cols");
  const std::size_t n_labels = read_be32(lab, 4, "labels.count");
  if (n != n_labels) {
    throw FormatError("labels.count", std::to_string(n_labels) + " labels for " + std::to_string(n) + " images");
  }
  const std::size_t pixels = n * rows * cols;
  if (img.size() != 16 + pixels) {
    throw FormatError("images.data", "expected " + std::to_string(16 + pixels) + " bytes, file has " +
                                         std::to_string(img.size()));
  }
  if (lab.size() != 8 + n) {
    throw FormatError("labels.data", "expected " + std::to_string(8 + n) + " bytes, file has " +
                                         std::to_string(lab.size()));
  }

  LabeledDataset ds;
  ds.name = std::move(name);
  ds.class_count = 10;
  std::vector<float> data(pixels);
  for (std::size_t i = 0; i < pixels; ++i) data[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.images = Tensor({n, 1, rows, cols}, std::move(data));
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    if (ds.labels[i] >= 10) throw FormatError("labels.data", "label " + std::to_string(ds.labels[i]) + " >= 10");
  }
  return ds;
}

LabeledDataset load_cifar10(std::span<const std::filesystem::path> batch_paths, std::string name) {
  std::vector<float> data;
  std::vector<int> labels;
  for (const auto& path : batch_paths) {
    const auto bytes = read_file(path, "cifar10.batch");
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
      throw FormatError("cifar10.record", path.filename().string() + " length " + std::to_string(bytes.size()) +
                                              " is not a multiple of 3073");
    }
    const std::size_t records = bytes.size() / kCifarRecord;
    data.reserve(data.size() + records * kCifarPixels);
    for (std::size_t r = 0; r < records; ++r) {
      const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
      if (rec[0] >= 10) throw FormatError("cifar10.label", "label " + std::to_string(rec[0]) + " >= 10");
      labels.push_back(rec[0]);
      for (std::size_t i = 0; i < kCifarPixels; ++i) data.push_back(static_cast<float>(rec[1 + i]) / 255.0f);
    }
  }
  LabeledDataset ds;
  ds.name = std::move(name);
  ds.class_count = 10;
  const std::size_t n = labels.size();
  ds.images = Tensor({n, 3, kCifarSide, kCifarSide}, std::move(data));
  ds.labels = std::move(labels);
  return ds;
}

void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  const InputSpec s = ds.spec();
  if (s.channels != 1) throw ShapeError("IDX images must be single-channel");
  std::ofstream img(images_path, std::ios::binary);
  write_be32(img, kIdxImageMagic);
  write_be32(img, static_cast<std::uint32_t>(ds.size()));
  write_be32(img, static_cast<std::uint32_t>(s.height));
  write_be32(img, static_cast<std::uint32_t>(s.width));
  for (float v : ds.images.data()) img.put(static_cast<char>(quantise(v)));
  std::ofstream lab(labels_path, std::ios::binary);
  write_be32(lab, kIdxLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.labels) lab.put(static_cast<char>(l));
  if (!img || !lab) throw std::runtime_error("failed writing IDX files");
}

void write_cifar10(const LabeledDataset& ds, const std::filesystem::path& path) {
  if (ds.spec() != InputSpec{3, kCifarSide, kCifarSide}) throw ShapeError("CIFAR-10 records are 3x32x32");
  std::ofstream out(path, std::ios::binary);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.put(static_cast<char>(ds.labels[i]));
    for (float v : ds.pixels(i)) out.put(static_cast<char>(quantise(v)));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  LabeledDataset out;
  out.name = ds.name;
  out.class_count = ds.class_count;
  const InputSpec s = ds.spec();
  const std::size_t stride = s.size();
  std::vector<float> data;
  data.reserve(indices.size() * stride);
  out.labels.reserve(indices.size());
  for (std::size_t idx : indices) {
    if (idx >= ds.size()) throw std::out_of_range("subset index " + std::to_string(idx));
    const auto px = ds.pixels(idx);
    data.insert(data.end(), px.begin(), px.end());
    out.labels.push_back(ds.labels[idx]);
  }
  out.images = Tensor({indices.size(), s.channels, s.height, s.width}, std::move(data));
  return out;
}

std::vector<std::size_t> sample_indices(const LabeledDataset& ds, std::size_t n, std::uint64_t seed,
                                        bool stratified) {
  if (n > ds.size()) {
    throw std::invalid_argument("cannot draw " + std::to_string(n) + " of " + std::to_string(ds.size()) + " images");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::shuffle(all.begin(), all.end(), rng);
  if (!stratified) {
    all.resize(n);
    return all;
  }

  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t idx : all) by_class[static_cast<std::size_t>(ds.labels[idx])].push_back(idx);
  std::vector<double> shares(ds.class_count);
  for (std::size_t k = 0; k < ds.class_count; ++k) {
    shares[k] = ds.empty() ? 0.0 : static_cast<double>(by_class[k].size()) / static_cast<double>(ds.size());
  }
  const auto quota = split_sizes(n, shares);
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t k = 0; k < ds.class_count; ++k) {
    out.insert(out.end(), by_class[k].begin(),
               by_class[k].begin() + static_cast<std::ptrdiff_t>(std::min(quota[k], by_class[k].size())));
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

LabeledDataset subsample(const LabeledDataset& ds, std::size_t n, std::uint64_t seed, bool stratified) {
  const auto idx = sample_indices(ds, n, seed, stratified);
  return subset(ds, idx);
}

std::vector<std::size_t> split_sizes(std::size_t total, std::span<const double> fractions) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw std::invalid_argument("split fractions must be non-negative");
    sum += f;
  }
  if (fractions.empty() || std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("split fractions must sum to 1");
  std::vector<std::size_t> sizes(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = fractions[i] / sum * static_cast<double>(total);
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += sizes[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++sizes[remainders[r % remainders.size()].second];
  return sizes;
}

std::vector<LabeledDataset> split(const LabeledDataset& ds, std::span<const double> fractions, std::uint64_t seed) {
  const auto sizes = split_sizes(ds.size(), fractions);
  const auto order = sample_indices(ds, ds.size(), seed);
  std::vector<LabeledDataset> parts;
  std::size_t offset = 0;
  for (std::size_t size : sizes) {
    parts.push_back(subset(ds, std::span(order).subspan(offset, size)));
    offset += size;
  }
  return parts;
}

std::vector<std::size_t> class_histogram(const LabeledDataset& ds) {
  std::vector<std::size_t> h(ds.class_count, 0);
  for (int l : ds.labels) ++h[static_cast<std::size_t>(l)];
  return h;
}

}  // namespace uapguard
