#pragma once

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "twinfuse/error.hpp"

namespace twinfuse::fusion {

using Bytes = std::vector<std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;
using RecordId = std::array<std::uint8_t, 16>;

inline Digest sha256(std::span<const std::uint8_t> data) {
  Digest d{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), d.data(), &len, EVP_sha256(), nullptr) != 1 || len != d.size())
    throw Error(ErrorCode::IoError, "sha256 failed");
  return d;
}

inline std::uint32_t crc32(std::span<const std::uint8_t> data, std::uint32_t seed = 0) {
  uLong c = seed;
  // zlib takes uInt lengths; feed in chunks for >4 GiB safety.
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    c = ::crc32(c, data.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

template <std::size_t N>
std::string to_hex(const std::array<std::uint8_t, N>& a) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(2 * N);
  for (auto b : a) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 15]);
  }
  return s;
}

template <std::size_t N>
std::array<std::uint8_t, N> from_hex(std::string_view s) {
  if (s.size() != 2 * N) throw Error(ErrorCode::MalformedPayload, "hex string has wrong length");
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error(ErrorCode::MalformedPayload, "invalid hex digit");
  };
  std::array<std::uint8_t, N> a{};
  for (std::size_t i = 0; i < N; ++i) a[i] = static_cast<std::uint8_t>(nib(s[2 * i]) << 4 | nib(s[2 * i + 1]));
  return a;
}

inline std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(), static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline Bytes base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::MalformedPayload, "base64 length not a multiple of 4");
  Bytes out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::MalformedPayload, "invalid base64");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

inline RecordId random_id(std::mt19937_64& rng) {
  RecordId id{};
  for (std::size_t i = 0; i < id.size(); i += 8) {
    const std::uint64_t v = rng();
    std::memcpy(id.data() + i, &v, 8);
  }
  return id;
}

/// Deterministic id from a namespace string and an integer (SHA-256 prefix).
inline RecordId derived_id(std::string_view ns, std::uint64_t n) {
  Bytes buf(ns.begin(), ns.end());
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(n >> (56 - 8 * i)));
  const Digest d = sha256(buf);
  RecordId id{};
  std::memcpy(id.data(), d.data(), id.size());
  return id;
}

/// Append-only encoder. Multi-byte integers are little-endian unless the
/// `_be` variant is used.
class Writer {
 public:
  Bytes& bytes() { return buf_; }
  Bytes take() { return std::move(buf_); }

  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16_be(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
    buf_.push_back(static_cast<std::uint8_t>(v));
  }
  void u32_be(std::uint32_t v) {
    for (int i = 3; i >= 0; --i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64_be(std::uint64_t v) {
    for (int i = 7; i >= 0; --i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void raw(std::span<const std::uint8_t> s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

 private:
  Bytes buf_;
};

/// Bounds-checked decoder; any overrun throws `on_error`.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, ErrorCode on_error = ErrorCode::MalformedPayload)
      : data_(data), err_(on_error) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) throw Error(err_, "truncated input");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16_be() {
    auto s = take(2);
    return static_cast<std::uint16_t>(s[0] << 8 | s[1]);
  }
  std::uint32_t u32_be() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (auto b : s) v = v << 8 | b;
    return v;
  }
  std::uint64_t u64_be() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (auto b : s) v = v << 8 | b;
    return v;
  }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = v << 8 | s[i];
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = v << 8 | s[i];
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  template <std::size_t N>
  std::array<std::uint8_t, N> array() {
    auto s = take(N);
    std::array<std::uint8_t, N> a{};
    std::memcpy(a.data(), s.data(), N);
    return a;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  ErrorCode err_;
};

}  // namespace twinfuse::fusion
