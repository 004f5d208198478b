#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <optional>
#include <string>

#include "twinfuse/fusion/bytes.hpp"
#include "twinfuse/geometry.hpp"

namespace twinfuse::fusion {

enum class ArtifactKind : std::uint8_t { Geometry = 0, Frame = 1, Defect = 2, Tag = 3, Metadata = 4 };

inline std::string_view to_string(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::Geometry: return "geometry";
    case ArtifactKind::Frame: return "frame";
    case ArtifactKind::Defect: return "defect";
    case ArtifactKind::Tag: return "tag";
    case ArtifactKind::Metadata: return "metadata";
  }
  return "?";
}

inline std::optional<ArtifactKind> kind_from_string(std::string_view s) {
  for (auto k : {ArtifactKind::Geometry, ArtifactKind::Frame, ArtifactKind::Defect, ArtifactKind::Tag,
                 ArtifactKind::Metadata})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline std::optional<ArtifactKind> kind_from_byte(std::uint8_t b) {
  if (b > static_cast<std::uint8_t>(ArtifactKind::Metadata)) return std::nullopt;
  return static_cast<ArtifactKind>(b);
}

struct ArtifactRecord {
  RecordId id{};
  ArtifactKind kind = ArtifactKind::Metadata;
  std::optional<RecordId> parent_id;
  Bytes payload;
  Digest content_hash{};
  std::optional<Aabb> bounds;
  std::int64_t created_at = 0;  // microseconds since the Unix epoch
  std::uint64_t version = 0;

  bool hash_matches() const { return sha256(payload) == content_hash; }
};

inline std::int64_t now_micros() {
  using namespace std::chrono;
  return duration_cast<microseconds>(system_clock::now().time_since_epoch()).count();
}

inline ArtifactRecord make_record(const RecordId& id, ArtifactKind kind, Bytes payload,
                                  std::optional<Aabb> bounds = std::nullopt,
                                  std::optional<RecordId> parent = std::nullopt, std::int64_t created_at = 0) {
  ArtifactRecord r;
  r.id = id;
  r.kind = kind;
  r.parent_id = parent;
  r.content_hash = sha256(payload);
  r.payload = std::move(payload);
  r.bounds = bounds;
  r.created_at = created_at != 0 ? created_at : now_micros();
  return r;
}

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_text(std::span<const std::uint8_t> b) { return std::string(b.begin(), b.end()); }

namespace codec {

inline constexpr std::uint8_t kHasParent = 1;
inline constexpr std::uint8_t kHasBounds = 2;

/// Little-endian record layout, payload last:
///   id[16] kind u8 flags u8 [parent[16]] version u64 created_at i64 hash[32]
///   [bounds 6 x f64] payload_len u64 payload
inline void encode(Writer& w, const ArtifactRecord& r) {
  w.raw(r.id);
  w.u8(static_cast<std::uint8_t>(r.kind));
  w.u8(static_cast<std::uint8_t>((r.parent_id ? kHasParent : 0) | (r.bounds ? kHasBounds : 0)));
  if (r.parent_id) w.raw(*r.parent_id);
  w.u64(r.version);
  w.i64(r.created_at);
  w.raw(r.content_hash);
  if (r.bounds) {
    for (int i = 0; i < 3; ++i) w.f64(r.bounds->min[i]);
    for (int i = 0; i < 3; ++i) w.f64(r.bounds->max[i]);
  }
  w.u64(r.payload.size());
  w.raw(r.payload);
}

/// Decodes a record. If `payload_offset` is given the payload bytes are not
/// copied; the offset of the payload within the reader's span is stored instead.
inline ArtifactRecord decode(Reader& rd, std::size_t* payload_offset = nullptr, std::uint64_t* payload_size = nullptr) {
  ArtifactRecord r;
  r.id = rd.array<16>();
  auto kind = kind_from_byte(rd.u8());
  if (!kind) throw Error(ErrorCode::CorruptRecord, "bad record kind");
  r.kind = *kind;
  const std::uint8_t flags = rd.u8();
  if (flags & kHasParent) r.parent_id = rd.array<16>();
  r.version = rd.u64();
  r.created_at = rd.i64();
  r.content_hash = rd.array<32>();
  if (flags & kHasBounds) {
    Aabb b;
    for (int i = 0; i < 3; ++i) b.min[i] = rd.f64();
    for (int i = 0; i < 3; ++i) b.max[i] = rd.f64();
    r.bounds = b;
  }
  const std::uint64_t n = rd.u64();
  if (n > rd.remaining()) throw Error(ErrorCode::CorruptRecord, "payload length overruns entry");
  if (payload_offset) {
    *payload_offset = rd.position();
    if (payload_size) *payload_size = n;
    rd.take(static_cast<std::size_t>(n));
  } else {
    auto s = rd.take(static_cast<std::size_t>(n));
    r.payload.assign(s.begin(), s.end());
  }
  return r;
}

}  // namespace codec

inline nlohmann::json aabb_json(const Aabb& b) {
  return {{"min", {b.min.x(), b.min.y(), b.min.z()}}, {"max", {b.max.x(), b.max.y(), b.max.z()}}};
}

inline Aabb aabb_from_json(const nlohmann::json& j) {
  Aabb b;
  const auto& mn = j.at("min");
  const auto& mx = j.at("max");
  if (!mn.is_array() || !mx.is_array() || mn.size() != 3 || mx.size() != 3)
    throw Error(ErrorCode::MalformedPayload, "box corners must be 3-vectors");
  for (int i = 0; i < 3; ++i) {
    b.min[i] = mn[i].get<double>();
    b.max[i] = mx[i].get<double>();
  }
  return b;
}

/// Header fields plus base64 payload, as carried in RESULT messages.
inline nlohmann::json to_json(const ArtifactRecord& r, bool with_payload = true) {
  nlohmann::json j{{"id", to_hex(r.id)},
                   {"kind", to_string(r.kind)},
                   {"version", r.version},
                   {"created_at", r.created_at},
                   {"content_hash", to_hex(r.content_hash)}};
  j["parent_id"] = r.parent_id ? nlohmann::json(to_hex(*r.parent_id)) : nlohmann::json(nullptr);
  j["bounds"] = r.bounds ? aabb_json(*r.bounds) : nlohmann::json(nullptr);
  if (with_payload) j["payload"] = base64_encode(r.payload);
  return j;
}

inline ArtifactRecord record_from_json(const nlohmann::json& j) {
  try {
    ArtifactRecord r;
    r.id = from_hex<16>(j.at("id").get<std::string>());
    auto k = kind_from_string(j.at("kind").get<std::string>());
    if (!k) throw Error(ErrorCode::MalformedPayload, "unknown kind");
    r.kind = *k;
    r.version = j.at("version").get<std::uint64_t>();
    r.created_at = j.at("created_at").get<std::int64_t>();
    r.content_hash = from_hex<32>(j.at("content_hash").get<std::string>());
    if (j.contains("parent_id") && !j["parent_id"].is_null()) r.parent_id = from_hex<16>(j["parent_id"].get<std::string>());
    if (j.contains("bounds") && !j["bounds"].is_null()) r.bounds = aabb_from_json(j["bounds"]);
    if (j.contains("payload")) r.payload = base64_decode(j["payload"].get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedPayload, e.what());
  }
}

}  // namespace twinfuse::fusion
