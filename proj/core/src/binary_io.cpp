#include "uapguard/binary_io.hpp"

#include <fstream>
#include <iterator>

#include "uapguard/errors.hpp"

namespace uapguard {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ByteWriter::bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::floats(std::span<const float> values) {
  buf_.reserve(buf_.size() + 4 * values.size());
  for (float v : values) f32(v);
}

void ByteWriter::finish_to(const std::filesystem::path& path) {
  u64(fnv1a64(buf_));
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

ByteReader ByteReader::open_checked(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("file", "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw FormatError("checksum", "file too short");
  ByteReader tail(std::vector<std::uint8_t>(bytes.end() - 8, bytes.end()));
  const std::uint64_t stored = tail.u64("checksum");
  const std::uint64_t actual = fnv1a64(std::span(bytes).first(bytes.size() - 8));
  if (stored != actual) throw FormatError("checksum", "mismatch (file truncated or corrupted)");
  ByteReader reader(std::move(bytes));
  reader.end_ = reader.buf_.size() - 8;
  return reader;
}

void ByteReader::need(std::size_t n, const std::string& field) const {
  if (end_ - pos_ < n) throw FormatError(field, "unexpected end of data");
}

std::string ByteReader::bytes(std::size_t n, const std::string& field) {
  need(n, field);
  std::string out(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return out;
}

std::uint32_t ByteReader::u32(const std::string& field) {
  need(4, field);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{buf_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64(const std::string& field) {
  need(8, field);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{buf_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
  pos_ += 8;
  return v;
}

std::vector<float> ByteReader::floats(std::size_t n, const std::string& field) {
  if (n > remaining() / 4) throw FormatError(field, "unexpected end of data");
  std::vector<float> out(n);
  for (float& v : out) v = f32(field);
  return out;
}

}  // namespace uapguard
