#pragma once

// Transport-independent protocol session. Bytes go in, response messages come
// out; the socket server and the in-process fuzz tests share this code path.

#include <atomic>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "twinfuse/defect/defect_geo.hpp"
#include "twinfuse/fusion/protocol.hpp"
#include "twinfuse/fusion/store.hpp"

namespace twinfuse::fusion {

struct IngestConfig {
  double hfov_deg = 87.0;
  double vfov_deg = 58.0;
  double cluster_radius = 0.1;
  std::size_t frame_cache = 64;
};

struct IngestStats {
  std::atomic<std::uint64_t> messages{0};
  std::atomic<std::uint64_t> errors{0};
  std::atomic<std::uint64_t> frames{0};
  std::atomic<std::uint64_t> detections{0};
  std::atomic<std::uint64_t> located{0};
  std::atomic<std::uint64_t> dropped{0};
};

/// Per-client scan state: frame/pose lookup, parked detections, defect clusters.
/// All access happens under `mu`.
struct ScanState {
  explicit ScanState(double radius) : clusters(radius) {}
  std::mutex mu;
  std::map<std::uint64_t, std::shared_ptr<const DepthFrame>> frames;
  std::deque<std::uint64_t> frame_order;
  std::map<std::uint64_t, Pose> poses;
  std::multimap<std::uint64_t, defect::Detection2D> parked;
  defect::Clusterer clusters;
};

/// State shared by every session of one server.
class IngestContext {
 public:
  explicit IngestContext(Store& store, IngestConfig cfg = {}) : store_(store), cfg_(cfg) {}

  Store& store() { return store_; }
  const IngestConfig& config() const { return cfg_; }
  IngestStats& stats() { return stats_; }

  std::shared_ptr<ScanState> scan(const std::string& client) {
    std::lock_guard l(mu_);
    auto& s = scans_[client];
    if (!s) s = std::make_shared<ScanState>(cfg_.cluster_radius);
    return s;
  }

  std::string new_session_id() {
    std::lock_guard l(mu_);
    return to_hex(derived_id("session:" + std::to_string(now_micros()), session_counter_++));
  }

  /// Put that treats a retransmission of identical (id, content_hash) as a
  /// no-op and returns the sequence of the original write.
  std::uint64_t put_dedup(ArtifactRecord r) {
    std::lock_guard l(put_mu_);
    if (auto prev = store_.latest_header(r.id); prev && prev->first.content_hash == r.content_hash)
      return prev->second;
    return store_.put(std::move(r)).sequence;
  }

 private:
  Store& store_;
  IngestConfig cfg_;
  IngestStats stats_;
  std::mutex mu_;
  std::mutex put_mu_;
  std::unordered_map<std::string, std::shared_ptr<ScanState>> scans_;
  std::uint64_t session_counter_ = 0;
};

inline RecordId frame_record_id(const std::string& client, std::uint64_t frame_id) {
  return derived_id("frame:" + client, frame_id);
}
inline RecordId pose_record_id(const std::string& client, std::uint64_t frame_id) {
  return derived_id("pose:" + client, frame_id);
}

class Session {
 public:
  explicit Session(IngestContext& ctx) : ctx_(ctx) {}

  /// Consumes raw bytes; returns encoded responses in order. After a framing
  /// violation closed() is true and further input is ignored.
  std::vector<Bytes> feed(std::span<const std::uint8_t> data) {
    std::vector<Bytes> out;
    if (closed_) return out;
    decoder_.feed(data);
    while (auto r = decoder_.next()) {
      if (auto* fe = std::get_if<proto::FramingError>(&*r)) {
        out.push_back(error(fe->code, fe->message));
        closed_ = true;
        break;
      }
      out.push_back(handle(std::get<proto::Frame>(*r)));
    }
    return out;
  }

  bool closed() const { return closed_; }
  bool ready() const { return ready_; }
  const std::string& session_id() const { return session_id_; }

  /// One response for one complete frame.
  Bytes handle(const proto::Frame& f) {
    ctx_.stats().messages++;
    if (f.version != proto::kVersion)
      return error(ErrorCode::UnsupportedVersion, "protocol version " + std::to_string(f.version));
    if (!proto::known_kind(f.kind)) return error(ErrorCode::UnknownKind, "kind " + std::to_string(f.kind));
    const auto kind = static_cast<proto::Kind>(f.kind);
    if (kind == proto::Kind::Ack || kind == proto::Kind::Result || kind == proto::Kind::Error)
      return error(ErrorCode::UnknownKind, "kind " + std::to_string(f.kind) + " is server-to-client only");
    if (kind != proto::Kind::Hello && !ready_) return error(ErrorCode::NotReady, "HELLO required first");
    try {
      switch (kind) {
        case proto::Kind::Hello: return on_hello(f.payload);
        case proto::Kind::Pose: return on_pose(f.payload);
        case proto::Kind::DepthFrame: return on_depth(f.payload);
        case proto::Kind::Detection: return on_detection(f.payload);
        case proto::Kind::Query: return on_query(f.payload);
        default: break;
      }
      return error(ErrorCode::UnknownKind, "unhandled kind");
    } catch (const Error& e) {
      return error(e.code(), e.what());
    } catch (const std::exception& e) {
      return error(ErrorCode::MalformedPayload, e.what());
    }
  }

 private:
  Bytes error(ErrorCode c, std::string_view msg) {
    ctx_.stats().errors++;
    return proto::error_message(c, msg);
  }

  static Bytes ack(std::uint64_t seq, nlohmann::json extra = nlohmann::json::object()) {
    extra["sequence"] = seq;
    return proto::encode(proto::Kind::Ack, extra);
  }

  Bytes on_hello(const Bytes& p) {
    const auto j = proto::parse_json(p);
    if (!j.is_object() || !j.contains("client") || !j["client"].is_string() || !j.contains("proto") ||
        !j["proto"].is_number_integer())
      throw Error(ErrorCode::MalformedPayload, "HELLO needs {client: string, proto: int}");
    if (j["proto"].get<std::int64_t>() != 1) throw Error(ErrorCode::UnsupportedVersion, "proto must be 1");
    client_ = j["client"].get<std::string>();
    scan_ = ctx_.scan(client_);
    if (session_id_.empty()) session_id_ = ctx_.new_session_id();
    ready_ = true;
    return ack(0, {{"session", session_id_}});
  }

  Bytes on_pose(const Bytes& p) {
    const auto j = proto::parse_json(p);
    const auto m = proto::pose_from_json(j);
    const std::uint64_t seq = ctx_.put_dedup(make_record(pose_record_id(client_, m.frame_id), ArtifactKind::Metadata, p,
                                                         std::nullopt, frame_record_id(client_, m.frame_id)));
    std::lock_guard l(scan_->mu);
    scan_->poses[m.frame_id] = m.pose;
    retry_parked(m.frame_id);
    return ack(seq);
  }

  Bytes on_depth(const Bytes& p) {
    auto frame = std::make_shared<DepthFrame>(proto::decode_depth_frame(p));
    const std::uint64_t seq =
        ctx_.put_dedup(make_record(frame_record_id(client_, frame->frame_id), ArtifactKind::Frame, p));
    ctx_.stats().frames++;
    std::lock_guard l(scan_->mu);
    const std::uint64_t id = frame->frame_id;
    if (!scan_->frames.count(id)) scan_->frame_order.push_back(id);
    scan_->frames[id] = std::move(frame);
    while (scan_->frame_order.size() > ctx_.config().frame_cache) {
      scan_->frames.erase(scan_->frame_order.front());
      scan_->frame_order.pop_front();
    }
    retry_parked(id);
    return ack(seq);
  }

  Bytes on_detection(const Bytes& p) {
    const auto det = defect::detection_from_json(proto::parse_json(p));
    Bytes idsrc = to_bytes("detection:" + client_ + ":");
    idsrc.insert(idsrc.end(), p.begin(), p.end());
    const Digest h = sha256(idsrc);
    RecordId id{};
    std::copy_n(h.begin(), id.size(), id.begin());
    const std::uint64_t seq =
        ctx_.put_dedup(make_record(id, ArtifactKind::Metadata, p, std::nullopt, frame_record_id(client_, det.frame_id)));
    ctx_.stats().detections++;
    nlohmann::json extra = nlohmann::json::object();
    std::lock_guard l(scan_->mu);
    if (auto defect_id = try_locate(det)) extra["defect_id"] = *defect_id;
    else extra["parked"] = true;
    return ack(seq, extra);
  }

  Bytes on_query(const Bytes& p) {
    const Query q = query_from_json(proto::parse_json(p));
    const auto records = ctx_.store().query(q);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records) arr.push_back(to_json(r, q.with_payload));
    std::string s = arr.dump();
    if (s.size() > proto::kMaxPayload)
      throw Error(ErrorCode::InvalidArgument, "result exceeds 16 MiB; narrow the query or set with_payload=false");
    return proto::encode(proto::Kind::Result, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }

  std::shared_ptr<const DepthFrame> find_frame(std::uint64_t frame_id) {
    if (auto it = scan_->frames.find(frame_id); it != scan_->frames.end()) return it->second;
    try {
      const ArtifactRecord r = ctx_.store().get(frame_record_id(client_, frame_id));
      return std::make_shared<DepthFrame>(proto::decode_depth_frame(r.payload));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NotFound) return nullptr;
      throw;
    }
  }

  // Caller holds scan_->mu. Returns the defect id, or nullopt if parked/dropped.
  std::optional<std::uint64_t> try_locate(const defect::Detection2D& det) {
    auto pose = scan_->poses.find(det.frame_id);
    auto frame = find_frame(det.frame_id);
    if (pose == scan_->poses.end() || !frame) {
      scan_->parked.emplace(det.frame_id, det);
      return std::nullopt;
    }
    const auto& cfg = ctx_.config();
    const auto k = CameraIntrinsics::from_fov(frame->width, frame->height, cfg.hfov_deg, cfg.vfov_deg);
    Vec3 anchor;
    try {
      anchor = defect::locate(det, *frame, k, pose->second);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NoValidDepth) {
        scan_->parked.emplace(det.frame_id, det);
      } else {
        ctx_.stats().dropped++;
      }
      return std::nullopt;
    }
    const std::size_t idx = scan_->clusters.add(anchor, det.label, det.confidence, det.frame_id);
    const auto& rec = scan_->clusters.records()[idx];
    defect::register_defect(rec, ctx_.store(), scan_->clusters.radius(), client_);
    ctx_.stats().located++;
    return rec.defect_id;
  }

  void retry_parked(std::uint64_t frame_id) {
    auto [lo, hi] = scan_->parked.equal_range(frame_id);
    std::vector<defect::Detection2D> pending;
    for (auto it = lo; it != hi; ++it) pending.push_back(it->second);
    scan_->parked.erase(lo, hi);
    for (const auto& d : pending) try_locate(d);
  }

  IngestContext& ctx_;
  proto::Decoder decoder_;
  bool ready_ = false;
  bool closed_ = false;
  std::string client_;
  std::string session_id_;
  std::shared_ptr<ScanState> scan_;
};

}  // namespace twinfuse::fusion
