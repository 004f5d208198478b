#pragma once

// Durable artifact store: WAL + periodic snapshot, in-memory version table,
// spatial grid index. Payload bytes stay on disk and are read (and verified
// against their content hash) on every get/query.
//
// Writers are serialised through one appender; an acknowledgement (return
// from put) happens only after the WAL entry is durable. Readers take a
// shared lock on the table.

#include <algorithm>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "twinfuse/fusion/record.hpp"
#include "twinfuse/fusion/spatial_index.hpp"
#include "twinfuse/fusion/wal.hpp"

namespace twinfuse::fusion {

struct StoreOptions {
  double cell_size = 1.0;
  std::uint64_t capacity_bytes = 0;  // 0 = unlimited
  std::size_t snapshot_every = 0;    // WAL entries between automatic snapshots, 0 = manual only
  bool sync = true;
};

struct PutResult {
  RecordId id{};
  std::uint64_t version = 0;
  std::uint64_t sequence = 0;
};

struct TimeRange {
  std::int64_t from = 0;  // inclusive, microseconds
  std::int64_t to = 0;    // inclusive
};

struct Query {
  std::optional<ArtifactKind> kind;
  std::optional<TimeRange> time_range;
  std::optional<Aabb> region;
  bool with_payload = true;

  bool empty() const { return !kind && !time_range && !region; }

  bool matches(const ArtifactRecord& r) const {
    if (kind && r.kind != *kind) return false;
    if (time_range && (r.created_at < time_range->from || r.created_at > time_range->to)) return false;
    if (region && (!r.bounds || !r.bounds->overlaps(*region))) return false;
    return true;
  }
};

inline nlohmann::json query_to_json(const Query& q) {
  nlohmann::json j = nlohmann::json::object();
  if (q.kind) j["kind"] = to_string(*q.kind);
  if (q.time_range) j["time_range"] = {q.time_range->from, q.time_range->to};
  if (q.region) j["region"] = aabb_json(*q.region);
  if (!q.with_payload) j["with_payload"] = false;
  return j;
}

inline Query query_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::MalformedPayload, "query must be a JSON object");
  try {
    Query q;
    if (j.contains("kind")) {
      auto k = kind_from_string(j["kind"].get<std::string>());
      if (!k) throw Error(ErrorCode::MalformedPayload, "unknown record kind");
      q.kind = k;
    }
    if (j.contains("time_range")) {
      const auto& t = j["time_range"];
      if (!t.is_array() || t.size() != 2) throw Error(ErrorCode::MalformedPayload, "time_range must be [from,to]");
      q.time_range = TimeRange{t[0].get<std::int64_t>(), t[1].get<std::int64_t>()};
    }
    if (j.contains("region")) q.region = aabb_from_json(j["region"]);
    q.with_payload = j.value("with_payload", true);
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedPayload, e.what());
  }
}

class Store {
 public:
  static constexpr const char* kWalName = "wal.log";
  static constexpr const char* kSnapshotName = "snapshot.bin";

  explicit Store(std::filesystem::path dir, StoreOptions opts = {})
      : dir_(std::move(dir)), opts_(opts), index_(opts.cell_size) {
    std::filesystem::create_directories(dir_);
    recover();
  }

  const std::filesystem::path& directory() const { return dir_; }

  PutResult put(ArtifactRecord r) {
    if (!r.hash_matches()) throw Error(ErrorCode::ChecksumMismatch, "payload does not match content_hash");
    if (r.bounds && (!r.bounds->min.allFinite() || !r.bounds->max.allFinite() || !r.bounds->valid()))
      throw Error(ErrorCode::InvalidRegion, "record bounds min > max or non-finite");
    if (r.created_at == 0) r.created_at = now_micros();

    std::lock_guard wl(write_mu_);
    {
      std::shared_lock rl(table_mu_);
      auto it = table_.find(r.id);
      r.version = it == table_.end() ? 1 : it->second.back().header.version + 1;
    }
    WalEntry e{next_seq_, WalOp::Put, r};
    const Bytes bytes = encode_entry(e);
    check_capacity(bytes.size());
    const std::uint64_t at = wal_.append(bytes);
    const std::uint64_t seq = next_seq_++;
    ++wal_entries_;

    // payload is the trailing part of the entry, before the crc
    const std::uint64_t payload_offset = at + bytes.size() - 4 - r.payload.size();
    const std::uint64_t payload_size = r.payload.size();
    r.payload.clear();
    r.payload.shrink_to_fit();
    {
      std::unique_lock tl(table_mu_);
      apply_put(std::move(r), seq, wal_segment_, payload_offset, payload_size);
    }
    maybe_snapshot_locked();
    return PutResult{e.record.id, e.record.version, seq};
  }

  /// Removes every version of `id`. Returns false if it was absent.
  bool remove(const RecordId& id) {
    std::lock_guard wl(write_mu_);
    {
      std::shared_lock rl(table_mu_);
      if (!table_.count(id)) return false;
    }
    WalEntry e{next_seq_, WalOp::Delete, {}};
    e.record.id = id;
    const Bytes bytes = encode_entry(e);
    check_capacity(bytes.size());
    wal_.append(bytes);
    ++next_seq_;
    ++wal_entries_;
    {
      std::unique_lock tl(table_mu_);
      apply_delete(id);
    }
    maybe_snapshot_locked();
    return true;
  }

  ArtifactRecord get(const RecordId& id, std::optional<std::uint64_t> version = std::nullopt) const {
    std::shared_lock rl(table_mu_);
    auto it = table_.find(id);
    if (it == table_.end()) throw Error(ErrorCode::NotFound, "no record " + to_hex(id));
    const auto& versions = it->second;
    const Stored* s = nullptr;
    if (!version) {
      s = &versions.back();
    } else {
      for (const auto& v : versions)
        if (v.header.version == *version) s = &v;
      if (!s) throw Error(ErrorCode::NotFound, "no version " + std::to_string(*version) + " of " + to_hex(id));
    }
    return materialize(*s, true);
  }

  /// Header of the latest version plus the WAL sequence that stored it.
  std::optional<std::pair<ArtifactRecord, std::uint64_t>> latest_header(const RecordId& id) const {
    std::shared_lock rl(table_mu_);
    auto it = table_.find(id);
    if (it == table_.end()) return std::nullopt;
    return std::make_pair(it->second.back().header, it->second.back().sequence);
  }

  /// Latest versions satisfying every filter, ordered by (created_at, id).
  std::vector<ArtifactRecord> query(const Query& q) const {
    if (q.empty()) throw Error(ErrorCode::InvalidArgument, "query needs at least one filter");
    if (q.region && !q.region->valid()) throw Error(ErrorCode::InvalidRegion, "region min > max");
    std::shared_lock rl(table_mu_);
    std::vector<const Stored*> hits;
    if (q.region) {
      std::unordered_set<RecordId, RecordIdHash> cand;
      index_.candidates(*q.region, cand);
      for (const auto& id : cand) {
        const Stored& s = table_.at(id).back();
        if (q.matches(s.header)) hits.push_back(&s);
      }
    } else {
      for (const auto& [id, versions] : table_)
        if (q.matches(versions.back().header)) hits.push_back(&versions.back());
    }
    std::sort(hits.begin(), hits.end(), [](const Stored* a, const Stored* b) {
      if (a->header.created_at != b->header.created_at) return a->header.created_at < b->header.created_at;
      return a->header.id < b->header.id;
    });
    std::vector<ArtifactRecord> out;
    out.reserve(hits.size());
    for (const Stored* s : hits) out.push_back(materialize(*s, q.with_payload));
    return out;
  }

  /// Every record's latest header (payload omitted); used by tests and tools.
  std::vector<ArtifactRecord> scan_latest() const {
    std::shared_lock rl(table_mu_);
    std::vector<ArtifactRecord> out;
    for (const auto& [id, versions] : table_) out.push_back(versions.back().header);
    return out;
  }

  std::size_t size() const {
    std::shared_lock rl(table_mu_);
    return table_.size();
  }

  std::uint64_t last_sequence() const {
    std::lock_guard wl(write_mu_);
    return next_seq_ - 1;
  }

  const SpatialIndex& index() const { return index_; }

  /// Writes every version to a new snapshot file, then truncates the WAL.
  void snapshot() {
    std::lock_guard wl(write_mu_);
    snapshot_locked();
  }

 private:
  struct Stored {
    ArtifactRecord header;  // payload empty
    std::uint64_t sequence = 0;
    std::shared_ptr<const Segment> segment;
    std::uint64_t payload_offset = 0;
    std::uint64_t payload_size = 0;
  };

  ArtifactRecord materialize(const Stored& s, bool with_payload) const {
    ArtifactRecord r = s.header;
    if (with_payload) {
      r.payload = s.segment->read(s.payload_offset, s.payload_size);
      if (!r.hash_matches()) throw Error(ErrorCode::CorruptRecord, "content hash mismatch for " + to_hex(r.id));
    }
    return r;
  }

  void apply_put(ArtifactRecord header, std::uint64_t seq, std::shared_ptr<const Segment> seg, std::uint64_t off,
                 std::uint64_t size) {
    auto& versions = table_[header.id];
    if (!versions.empty() && versions.back().header.bounds) index_.erase(header.id, *versions.back().header.bounds);
    if (header.bounds) index_.insert(header.id, *header.bounds);
    versions.push_back(Stored{std::move(header), seq, std::move(seg), off, size});
  }

  void apply_delete(const RecordId& id) {
    auto it = table_.find(id);
    if (it == table_.end()) return;
    if (it->second.back().header.bounds) index_.erase(id, *it->second.back().header.bounds);
    table_.erase(it);
  }

  void check_capacity(std::size_t extra) const {
    if (opts_.capacity_bytes == 0) return;
    std::uint64_t used = wal_.size();
    std::error_code ec;
    const auto snap = std::filesystem::file_size(dir_ / kSnapshotName, ec);
    if (!ec) used += snap;
    if (used + extra > opts_.capacity_bytes) throw Error(ErrorCode::StorageFull, "store capacity exceeded");
  }

  void maybe_snapshot_locked() {
    if (opts_.snapshot_every != 0 && wal_entries_ >= opts_.snapshot_every) snapshot_locked();
  }

  // Snapshot layout (little-endian):
  //   "TFSNAP01" | u32 format | u32 crc(first 12 bytes)
  //   { u32 len | u64 sequence | record encoding | u32 crc(len + body) }*
  //   "TFSNEND1" | u64 count | u64 max_sequence | u32 crc(previous 24 bytes)
  void snapshot_locked() {
    const auto path = dir_ / kSnapshotName;
    const auto tmp = dir_ / "snapshot.tmp";
    struct Loc {
      RecordId id;
      std::size_t index;
      std::uint64_t payload_offset;
    };
    std::vector<Loc> locs;
    Writer w;
    w.raw(std::span(reinterpret_cast<const std::uint8_t*>("TFSNAP01"), 8));
    w.u32(1);
    w.u32(crc32(w.bytes()));
    std::uint64_t count = 0;
    {
      std::shared_lock rl(table_mu_);
      for (const auto& [id, versions] : table_) {
        for (std::size_t i = 0; i < versions.size(); ++i) {
          const Stored& s = versions[i];
          ArtifactRecord full = materialize(s, true);
          Writer body;
          body.u64(s.sequence);
          codec::encode(body, full);
          const std::uint64_t start = w.bytes().size();
          w.u32(static_cast<std::uint32_t>(body.bytes().size()));
          w.raw(body.bytes());
          w.u32(crc32(std::span(w.bytes()).subspan(start)));
          locs.push_back(Loc{id, i, w.bytes().size() - 4 - full.payload.size()});
          ++count;
        }
      }
    }
    const std::uint64_t footer_at = w.bytes().size();
    w.raw(std::span(reinterpret_cast<const std::uint8_t*>("TFSNEND1"), 8));
    w.u64(count);
    w.u64(next_seq_ - 1);
    w.u32(crc32(std::span(w.bytes()).subspan(footer_at)));

    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw Error(ErrorCode::IoError, "open " + tmp.string());
    try {
      detail::write_all(fd, w.bytes(), tmp.string());
      detail::sync_fd(fd, tmp.string());
    } catch (...) {
      ::close(fd);
      std::filesystem::remove(tmp);
      throw;
    }
    ::close(fd);
    std::filesystem::rename(tmp, path);
    detail::sync_dir(dir_);

    auto seg = std::make_shared<const Segment>(path);
    {
      std::unique_lock tl(table_mu_);
      for (const auto& l : locs) {
        Stored& s = table_.at(l.id)[l.index];
        s.segment = seg;
        s.payload_offset = l.payload_offset;
      }
    }
    write_wal(dir_ / kWalName, {});
    wal_ = WalWriter(dir_ / kWalName, kWalHeaderSize, opts_.sync);
    wal_segment_ = std::make_shared<const Segment>(dir_ / kWalName);
    wal_entries_ = 0;
  }

  std::uint64_t load_snapshot() {
    const auto path = dir_ / kSnapshotName;
    if (!std::filesystem::exists(path)) return 0;
    const Bytes data = detail::read_file(path);
    constexpr std::size_t kFooter = 28;
    if (data.size() < 16 + kFooter || std::memcmp(data.data(), "TFSNAP01", 8) != 0)
      throw Error(ErrorCode::UnreadableLog, "bad snapshot header");
    const auto footer = std::span(data).subspan(data.size() - kFooter);
    Reader fr(footer);
    if (std::memcmp(fr.take(8).data(), "TFSNEND1", 8) != 0) throw Error(ErrorCode::UnreadableLog, "bad snapshot footer");
    const std::uint64_t count = fr.u64();
    const std::uint64_t max_seq = fr.u64();
    if (fr.u32() != crc32(footer.first(24))) throw Error(ErrorCode::UnreadableLog, "snapshot footer crc");

    auto seg = std::make_shared<const Segment>(path);
    std::uint64_t pos = 16;
    const std::uint64_t end = data.size() - kFooter;
    std::vector<std::tuple<std::uint64_t, ArtifactRecord, std::uint64_t, std::uint64_t>> loaded;
    for (std::uint64_t n = 0; n < count; ++n) {
      if (end - pos < 8) throw Error(ErrorCode::UnreadableLog, "snapshot truncated");
      Reader lr{std::span(data).subspan(pos, 4), ErrorCode::UnreadableLog};
      const std::uint32_t len = lr.u32();
      if (end - pos < 8ull + len) throw Error(ErrorCode::UnreadableLog, "snapshot truncated");
      Reader cr{std::span(data).subspan(pos + 4 + len, 4), ErrorCode::UnreadableLog};
      if (cr.u32() != crc32(std::span(data).subspan(pos, 4 + len)))
        throw Error(ErrorCode::UnreadableLog, "snapshot entry crc");
      Reader body{std::span(data).subspan(pos + 4, len), ErrorCode::UnreadableLog};
      const std::uint64_t seq = body.u64();
      std::size_t poff = 0;
      std::uint64_t psize = 0;
      ArtifactRecord r = codec::decode(body, &poff, &psize);
      loaded.emplace_back(seq, std::move(r), pos + 4 + poff, psize);
      pos += 8ull + len;
    }
    // versions must be applied in sequence order per id
    std::sort(loaded.begin(), loaded.end(), [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
    for (auto& [seq, r, off, size] : loaded) apply_put(std::move(r), seq, seg, off, size);
    return max_seq;
  }

  void recover() {
    const std::uint64_t snap_seq = load_snapshot();
    const auto wal_path = dir_ / kWalName;
    if (!std::filesystem::exists(wal_path)) write_wal(wal_path, {});
    const Bytes data = detail::read_file(wal_path);
    WalScan scan = scan_wal(data);
    auto seg = std::make_shared<const Segment>(wal_path);
    std::uint64_t max_seq = snap_seq;
    for (auto& se : scan.entries) {
      if (se.entry.sequence <= snap_seq) continue;
      if (se.entry.op == WalOp::Put) {
        apply_put(std::move(se.entry.record), se.entry.sequence, seg, se.payload_offset, se.payload_size);
      } else {
        apply_delete(se.entry.record.id);
      }
      max_seq = std::max(max_seq, se.entry.sequence);
      ++wal_entries_;
    }
    recovered_torn_tail_ = scan.torn;
    next_seq_ = max_seq + 1;
    wal_ = WalWriter(wal_path, scan.valid_end, opts_.sync);
    wal_segment_ = seg;
  }

 public:
  /// True if the last open discarded a torn WAL tail.
  bool recovered_torn_tail() const { return recovered_torn_tail_; }

 private:
  std::filesystem::path dir_;
  StoreOptions opts_;
  mutable std::mutex write_mu_;
  mutable std::shared_mutex table_mu_;
  std::unordered_map<RecordId, std::vector<Stored>, RecordIdHash> table_;
  SpatialIndex index_;
  WalWriter wal_;
  std::shared_ptr<const Segment> wal_segment_;
  std::uint64_t next_seq_ = 1;
  std::size_t wal_entries_ = 0;
  bool recovered_torn_tail_ = false;
};

}  // namespace twinfuse::fusion
