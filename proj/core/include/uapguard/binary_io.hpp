#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace uapguard {

/// FNV-1a 64-bit hash, used as the trailing checksum of saved blobs.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

/// Little-endian byte sink for the model and perturbation formats.
class ByteWriter {
 public:
  void bytes(std::string_view raw);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void floats(std::span<const float> values);

  /// Appends the checksum of everything written so far and writes the file.
  void finish_to(const std::filesystem::path& path);

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader; every failure throws FormatError naming `field`.
class ByteReader {
 public:
  /// Loads the file and verifies the trailing checksum.
  static ByteReader open_checked(const std::filesystem::path& path);

  explicit ByteReader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {}

  std::string bytes(std::size_t n, const std::string& field);
  std::uint32_t u32(const std::string& field);
  std::uint64_t u64(const std::string& field);
  float f32(const std::string& field) { return std::bit_cast<float>(u32(field)); }
  double f64(const std::string& field) { return std::bit_cast<double>(u64(field)); }
  std::vector<float> floats(std::size_t n, const std::string& field);
  std::size_t remaining() const noexcept { return end_ - pos_; }

 private:
  void need(std::size_t n, const std::string& field) const;

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = buf_.size();
};

}  // namespace uapguard
