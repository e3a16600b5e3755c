#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace realant::util {

using Bytes = std::vector<std::uint8_t>;

/// Malformed binary input, with the offset where decoding stopped.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Little-endian serializer.
class ByteWriter {
 public:
  Bytes& bytes() { return out_; }
  Bytes take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void string(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void patch_u32(std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }

 private:
  Bytes out_;
};

/// Bounds-checked little-endian reader.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size, std::size_t base_offset = 0)
      : data_(data), size_(size), base_(base_offset) {}
  explicit ByteReader(const Bytes& b, std::size_t base_offset = 0) : ByteReader(b.data(), b.size(), base_offset) {}

  std::size_t offset() const { return base_ + pos_; }
  std::size_t remaining() const { return size_ - pos_; }
  bool done() const { return pos_ == size_; }

  void need(std::size_t n, const char* what) const {
    if (n > size_ - pos_) throw DecodeError(std::string("truncated ") + what, offset());
  }

  std::uint8_t u8(const char* what = "u8") {
    need(1, what);
    return data_[pos_++];
  }
  std::uint32_t u32(const char* what = "u32") {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what = "u64") {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32(const char* what = "f32") { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what = "f64") { return std::bit_cast<double>(u64(what)); }
  void raw(void* out, std::size_t n, const char* what = "bytes") {
    need(n, what);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::string string(const char* what = "string") {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  Bytes rest() {
    Bytes b(data_ + pos_, data_ + size_);
    pos_ = size_;
    return b;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

/// splitmix64 finalizer, used to derive independent seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace realant::util
