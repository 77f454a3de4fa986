#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>

#include "hact/error.hpp"

namespace hact::detail {

// Little-endian encoder into a byte string.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { buf_ += s; }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  const std::string& data() const { return buf_; }
  std::string& data() { return buf_; }

 private:
  std::string buf_;
};

// Bounds-checked little-endian decoder; errors name the source and offset.
class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string source, std::size_t end = std::string::npos)
      : buf_(buf), source_(std::move(source)), end_(end == std::string::npos ? buf.size() : end) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == end_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw LoadError(source_ + ": " + what + " at offset " + std::to_string(pos_));
  }

  void need(std::size_t n, const char* what) const {
    if (end_ - pos_ < n) fail(std::string("truncated ") + what);
  }
  std::uint8_t u8(const char* what = "byte") {
    need(1, what);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32(const char* what = "u32") {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what = "u64") {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what = "f64") { return std::bit_cast<double>(u64(what)); }
  std::string bytes(std::size_t n, const char* what = "bytes") {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str(const char* what = "string") {
    const std::uint32_t n = u32(what);
    return bytes(n, what);
  }

 private:
  const std::string& buf_;
  std::string source_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<std::uint8_t>(data[i]);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace hact::detail
