#pragma once

// Wire framing: "TF" | version u8 | kind u8 | length u32 BE | payload.

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <variant>

#include "twinfuse/fusion/bytes.hpp"
#include "twinfuse/geometry.hpp"

namespace twinfuse::fusion::proto {

inline constexpr std::uint8_t kMagic0 = 0x54;
inline constexpr std::uint8_t kMagic1 = 0x46;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 8;
inline constexpr std::uint32_t kMaxPayload = 16u << 20;

enum class Kind : std::uint8_t {
  Error = 0x00,
  Hello = 0x01,
  Pose = 0x02,
  DepthFrame = 0x03,
  Detection = 0x04,
  Ack = 0x05,
  Query = 0x06,
  Result = 0x07,
};

inline bool known_kind(std::uint8_t k) { return k <= 0x07; }

struct Message {
  std::uint8_t version = kVersion;
  Kind kind = Kind::Error;
  Bytes payload;
};

inline Bytes encode(Kind kind, std::span<const std::uint8_t> payload, std::uint8_t version = kVersion) {
  if (payload.size() > kMaxPayload) throw Error(ErrorCode::InvalidArgument, "payload exceeds 16 MiB");
  Writer w;
  w.u8(kMagic0);
  w.u8(kMagic1);
  w.u8(version);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u32_be(static_cast<std::uint32_t>(payload.size()));
  w.raw(payload);
  return w.take();
}

inline Bytes encode(Kind kind, const Bytes& payload) { return encode(kind, std::span<const std::uint8_t>(payload)); }

inline Bytes encode(Kind kind, const nlohmann::json& j) {
  const std::string s = j.dump();
  return encode(kind, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

/// One unit pulled off a byte stream: a complete message (possibly with an
/// unsupported version or unknown kind, reported to the session) or a fatal
/// framing violation after which the stream is unusable.
struct Frame {
  std::uint8_t version = 0;
  std::uint8_t kind = 0;
  Bytes payload;
};

struct FramingError {
  ErrorCode code;
  std::string message;
};

using DecodeResult = std::variant<Frame, FramingError>;

/// Incremental decoder. Feed bytes, then call next() until it returns nullopt.
class Decoder {
 public:
  void feed(std::span<const std::uint8_t> data) {
    if (failed_) return;
    buf_.insert(buf_.end(), data.begin(), data.end());
  }

  std::optional<DecodeResult> next() {
    if (failed_) return std::nullopt;
    const std::size_t avail = buf_.size() - pos_;
    // Check the magic as soon as the bytes arrive, so garbage is rejected
    // without waiting for a full header.
    if (avail >= 1 && buf_[pos_] != kMagic0) return fail(ErrorCode::BadMagic, "bad magic");
    if (avail >= 2 && buf_[pos_ + 1] != kMagic1) return fail(ErrorCode::BadMagic, "bad magic");
    if (avail < kHeaderSize) return std::nullopt;
    Reader hdr{std::span(buf_).subspan(pos_ + 4, 4)};
    const std::uint32_t len = hdr.u32_be();
    if (len > kMaxPayload) return fail(ErrorCode::MalformedPayload, "payload length exceeds 16 MiB");
    if (avail < kHeaderSize + len) return std::nullopt;
    Frame f;
    f.version = buf_[pos_ + 2];
    f.kind = buf_[pos_ + 3];
    const auto first = buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + kHeaderSize);
    f.payload.assign(first, first + len);
    pos_ += kHeaderSize + len;
    compact();
    return f;
  }

  std::size_t buffered() const { return buf_.size() - pos_; }
  bool failed() const { return failed_; }

 private:
  DecodeResult fail(ErrorCode c, std::string m) {
    failed_ = true;
    buf_.clear();
    pos_ = 0;
    return FramingError{c, std::move(m)};
  }

  void compact() {
    if (pos_ > (1u << 16) && pos_ * 2 > buf_.size()) {
      buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
      pos_ = 0;
    }
  }

  Bytes buf_;
  std::size_t pos_ = 0;
  bool failed_ = false;
};

// ---- payload codecs ----

inline Bytes encode_depth_frame(const DepthFrame& f) {
  if (f.width > 0xFFFF || f.height > 0xFFFF || f.width <= 0 || f.height <= 0)
    throw Error(ErrorCode::InvalidArgument, "frame dimensions must fit in u16");
  if (f.depths.size() != static_cast<std::size_t>(f.width) * f.height)
    throw Error(ErrorCode::InvalidArgument, "depth array size mismatch");
  Writer w;
  w.u64_be(f.frame_id);
  w.u16_be(static_cast<std::uint16_t>(f.width));
  w.u16_be(static_cast<std::uint16_t>(f.height));
  for (auto d : f.depths) w.u16_be(d);
  return w.take();
}

inline DepthFrame decode_depth_frame(std::span<const std::uint8_t> p) {
  Reader r(p);
  DepthFrame f;
  f.frame_id = r.u64_be();
  f.width = r.u16_be();
  f.height = r.u16_be();
  const std::size_t n = static_cast<std::size_t>(f.width) * f.height;
  if (n == 0 || r.remaining() != 2 * n) throw Error(ErrorCode::MalformedPayload, "depth frame size mismatch");
  f.depths.resize(n);
  for (auto& d : f.depths) d = r.u16_be();
  return f;
}

struct PoseMessage {
  std::uint64_t frame_id = 0;
  Pose pose;
};

inline nlohmann::json to_json(const PoseMessage& m) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(m.pose.rotation(r, c));
  return {{"frame_id", m.frame_id},
          {"rotation", rot},
          {"translation", {m.pose.translation.x(), m.pose.translation.y(), m.pose.translation.z()}}};
}

inline PoseMessage pose_from_json(const nlohmann::json& j) {
  try {
    PoseMessage m;
    m.frame_id = j.at("frame_id").get<std::uint64_t>();
    const auto& r = j.at("rotation");
    const auto& t = j.at("translation");
    if (!r.is_array() || r.size() != 9 || !t.is_array() || t.size() != 3)
      throw Error(ErrorCode::MalformedPayload, "pose needs rotation[9] and translation[3]");
    for (int i = 0; i < 9; ++i) m.pose.rotation(i / 3, i % 3) = r[i].get<double>();
    for (int i = 0; i < 3; ++i) m.pose.translation[i] = t[i].get<double>();
    if (!m.pose.rotation.allFinite() || !m.pose.translation.allFinite() ||
        orthonormality_error(m.pose.rotation) > 1e-6 || m.pose.rotation.determinant() < 0)
      throw Error(ErrorCode::MalformedPayload, "pose rotation is not a rotation matrix");
    m.pose.rotation = nearest_rotation(m.pose.rotation);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedPayload, e.what());
  }
}

inline nlohmann::json parse_json(std::span<const std::uint8_t> p) {
  auto j = nlohmann::json::parse(p.begin(), p.end(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::MalformedPayload, "payload is not valid JSON");
  return j;
}

inline Bytes error_message(ErrorCode code, std::string_view message) {
  return encode(Kind::Error, nlohmann::json{{"code", to_string(code)}, {"message", message}});
}

}  // namespace twinfuse::fusion::proto
