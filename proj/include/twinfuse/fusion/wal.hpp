#pragma once

// Write-ahead log.
//
// File layout:
//   header  "TFWALv01" | u32 format (=1) | u32 crc32(first 12 bytes)
//   entry*  u32 body_len | body | u32 crc32(body_len bytes + body)
//   body    u64 sequence | u8 op | (op=put: record encoding | op=delete: id[16])
//
// All integers are little-endian. Replay stops at the first entry that is
// truncated, fails its crc, or breaks the strictly increasing sequence order;
// everything after that point is treated as a torn write.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "twinfuse/fusion/record.hpp"

namespace twinfuse::fusion {

enum class WalOp : std::uint8_t { Put = 1, Delete = 2 };

struct WalEntry {
  std::uint64_t sequence = 0;
  WalOp op = WalOp::Put;
  ArtifactRecord record;  // for Delete only `id` is meaningful
};

inline constexpr char kWalMagic[8] = {'T', 'F', 'W', 'A', 'L', 'v', '0', '1'};
inline constexpr std::size_t kWalHeaderSize = 16;
inline constexpr std::uint32_t kMaxEntryBody = 64u << 20;

namespace detail {

inline void write_all(int fd, std::span<const std::uint8_t> data, const std::string& what) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == ENOSPC || errno == EDQUOT) throw Error(ErrorCode::StorageFull, what + ": " + std::strerror(errno));
      throw Error(ErrorCode::IoError, what + ": " + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

inline void sync_fd(int fd, const std::string& what) {
  if (::fdatasync(fd) != 0) throw Error(ErrorCode::IoError, what + ": fdatasync: " + std::strerror(errno));
}

inline void sync_dir(const std::filesystem::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

inline Bytes read_file(const std::filesystem::path& p) {
  const int fd = ::open(p.c_str(), O_RDONLY);
  if (fd < 0) throw Error(ErrorCode::IoError, "open " + p.string() + ": " + std::strerror(errno));
  Bytes out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const ssize_t n = ::read(fd, buf, sizeof(buf));
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw Error(ErrorCode::IoError, "read " + p.string());
    }
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  ::close(fd);
  return out;
}

inline Bytes wal_header() {
  Writer w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kWalMagic), 8));
  w.u32(1);
  w.u32(crc32(w.bytes()));
  return w.take();
}

}  // namespace detail

/// An open, read-only handle on a file holding record payloads.
class Segment {
 public:
  explicit Segment(const std::filesystem::path& p) : path_(p) {
    fd_ = ::open(p.c_str(), O_RDONLY);
    if (fd_ < 0) throw Error(ErrorCode::IoError, "open " + p.string() + ": " + std::strerror(errno));
  }
  ~Segment() {
    if (fd_ >= 0) ::close(fd_);
  }
  Segment(const Segment&) = delete;
  Segment& operator=(const Segment&) = delete;

  Bytes read(std::uint64_t offset, std::uint64_t size) const {
    Bytes out(size);
    std::size_t done = 0;
    while (done < size) {
      const ssize_t n = ::pread(fd_, out.data() + done, size - done, static_cast<off_t>(offset + done));
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Error(ErrorCode::CorruptRecord, "payload extends past end of " + path_.string());
      done += static_cast<std::size_t>(n);
    }
    return out;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

/// Location of one decoded entry within the log file.
struct WalScanEntry {
  WalEntry entry;              // record.payload left empty
  std::uint64_t offset = 0;    // start of the entry
  std::uint64_t payload_offset = 0;
  std::uint64_t payload_size = 0;
};

struct WalScan {
  std::vector<WalScanEntry> entries;
  std::uint64_t valid_end = kWalHeaderSize;  // byte offset just past the last valid entry
  std::uint64_t file_size = 0;
  bool torn = false;
};

inline Bytes encode_entry(const WalEntry& e) {
  Writer body;
  body.u64(e.sequence);
  body.u8(static_cast<std::uint8_t>(e.op));
  if (e.op == WalOp::Put) codec::encode(body, e.record);
  else body.raw(e.record.id);
  Writer w;
  w.u32(static_cast<std::uint32_t>(body.bytes().size()));
  w.raw(body.bytes());
  w.u32(crc32(w.bytes()));
  return w.take();
}

/// Parses a complete log image. Throws UnreadableLog if the header is bad.
inline WalScan scan_wal(std::span<const std::uint8_t> data) {
  if (data.size() < kWalHeaderSize || std::memcmp(data.data(), kWalMagic, 8) != 0)
    throw Error(ErrorCode::UnreadableLog, "bad WAL header");
  Reader hdr(data.first(kWalHeaderSize));
  hdr.take(8);
  const std::uint32_t format = hdr.u32();
  const std::uint32_t crc = hdr.u32();
  if (format != 1 || crc != crc32(data.first(12))) throw Error(ErrorCode::UnreadableLog, "bad WAL header");

  WalScan scan;
  scan.file_size = data.size();
  std::uint64_t pos = kWalHeaderSize;
  std::uint64_t last_seq = 0;
  while (pos < data.size()) {
    if (data.size() - pos < 8) {
      scan.torn = true;
      break;
    }
    Reader lr(data.subspan(pos, 4));
    const std::uint32_t len = lr.u32();
    if (len > kMaxEntryBody || data.size() - pos < 8ull + len) {
      scan.torn = true;
      break;
    }
    Reader cr(data.subspan(pos + 4 + len, 4));
    if (cr.u32() != crc32(data.subspan(pos, 4 + len))) {
      scan.torn = true;
      break;
    }
    try {
      Reader body(data.subspan(pos + 4, len), ErrorCode::CorruptRecord);
      WalScanEntry se;
      se.offset = pos;
      se.entry.sequence = body.u64();
      const std::uint8_t op = body.u8();
      if (op == static_cast<std::uint8_t>(WalOp::Put)) {
        se.entry.op = WalOp::Put;
        std::size_t poff = 0;
        std::uint64_t psize = 0;
        se.entry.record = codec::decode(body, &poff, &psize);
        se.payload_offset = pos + 4 + poff;
        se.payload_size = psize;
      } else if (op == static_cast<std::uint8_t>(WalOp::Delete)) {
        se.entry.op = WalOp::Delete;
        se.entry.record.id = body.array<16>();
      } else {
        throw Error(ErrorCode::CorruptRecord, "bad op");
      }
      if (!scan.entries.empty() && se.entry.sequence <= last_seq) throw Error(ErrorCode::CorruptRecord, "sequence");
      last_seq = se.entry.sequence;
      scan.entries.push_back(std::move(se));
    } catch (const Error&) {
      scan.torn = true;
      break;
    }
    pos += 8ull + len;
    scan.valid_end = pos;
  }
  return scan;
}

/// Replays a log file into the list of valid entries (with payloads).
/// A torn tail is discarded; the file itself is left untouched.
inline std::vector<WalEntry> read_wal(const std::filesystem::path& path) {
  const Bytes data = detail::read_file(path);
  WalScan scan = scan_wal(data);
  std::vector<WalEntry> out;
  out.reserve(scan.entries.size());
  for (auto& se : scan.entries) {
    if (se.entry.op == WalOp::Put) {
      auto first = data.begin() + static_cast<std::ptrdiff_t>(se.payload_offset);
      se.entry.record.payload.assign(first, first + static_cast<std::ptrdiff_t>(se.payload_size));
    }
    out.push_back(std::move(se.entry));
  }
  return out;
}

/// Writes a fresh log containing exactly `entries`, atomically replacing `path`.
inline void write_wal(const std::filesystem::path& path, const std::vector<WalEntry>& entries) {
  const auto tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(ErrorCode::IoError, "open " + tmp + ": " + std::strerror(errno));
  try {
    detail::write_all(fd, detail::wal_header(), tmp);
    for (const auto& e : entries) detail::write_all(fd, encode_entry(e), tmp);
    detail::sync_fd(fd, tmp);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  std::filesystem::rename(tmp, path);
  detail::sync_dir(path.parent_path().empty() ? "." : path.parent_path());
}

/// Append-only writer. Each append is durable (fdatasync) before it returns.
class WalWriter {
 public:
  WalWriter() = default;
  WalWriter(const std::filesystem::path& path, std::uint64_t truncate_to, bool sync = true) : path_(path), sync_(sync) {
    fd_ = ::open(path.c_str(), O_WRONLY);
    if (fd_ < 0) throw Error(ErrorCode::IoError, "open " + path.string() + ": " + std::strerror(errno));
    if (::ftruncate(fd_, static_cast<off_t>(truncate_to)) != 0)
      throw Error(ErrorCode::IoError, "ftruncate " + path.string());
    if (::lseek(fd_, static_cast<off_t>(truncate_to), SEEK_SET) < 0) throw Error(ErrorCode::IoError, "lseek");
    size_ = truncate_to;
    if (sync_) detail::sync_fd(fd_, path.string());
  }
  ~WalWriter() {
    if (fd_ >= 0) ::close(fd_);
  }
  WalWriter(WalWriter&& o) noexcept { *this = std::move(o); }
  WalWriter& operator=(WalWriter&& o) noexcept {
    if (this != &o) {
      if (fd_ >= 0) ::close(fd_);
      fd_ = std::exchange(o.fd_, -1);
      path_ = std::move(o.path_);
      size_ = o.size_;
      sync_ = o.sync_;
    }
    return *this;
  }

  /// Returns the file offset at which `bytes` begins.
  std::uint64_t append(std::span<const std::uint8_t> bytes) {
    const std::uint64_t at = size_;
    try {
      detail::write_all(fd_, bytes, path_.string());
      if (sync_) detail::sync_fd(fd_, path_.string());
    } catch (...) {
      // Drop a partially written entry so the log stays well-formed.
      if (::ftruncate(fd_, static_cast<off_t>(at)) == 0) ::lseek(fd_, static_cast<off_t>(at), SEEK_SET);
      throw;
    }
    size_ += bytes.size();
    return at;
  }

  std::uint64_t size() const { return size_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t size_ = 0;
  bool sync_ = true;
};

}  // namespace twinfuse::fusion
