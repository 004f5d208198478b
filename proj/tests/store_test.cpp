#include <gtest/gtest.h>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "twinfuse/fusion/store.hpp"
#include "test_util.hpp"

using namespace twinfuse;
using namespace twinfuse::fusion;
using twinfuse::testing::TempDir;

namespace {

Bytes payload_for(std::uint64_t i, std::size_t size) {
  std::mt19937_64 rng(i * 7919 + 1);
  Bytes b(size);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

ArtifactRecord numbered(std::uint64_t i, std::size_t size = 64) {
  return make_record(derived_id("rec", i), static_cast<ArtifactKind>(i % 5), payload_for(i, size), std::nullopt,
                     std::nullopt, 1'000'000 + static_cast<std::int64_t>(i));
}

Aabb random_box(std::mt19937_64& rng, double extent, double max_size) {
  std::uniform_real_distribution<double> pos(-extent, extent), size(0.0, max_size);
  Aabb b;
  b.min = Vec3(pos(rng), pos(rng), pos(rng));
  b.max = b.min + Vec3(size(rng), size(rng), size(rng));
  return b;
}

std::vector<RecordId> ids_of(const std::vector<ArtifactRecord>& rs) {
  std::vector<RecordId> out;
  for (const auto& r : rs) out.push_back(r.id);
  return out;
}

// Latest headers a brute-force scan would return, in the documented order.
std::vector<RecordId> brute_force(const std::map<RecordId, ArtifactRecord>& shadow, const Query& q) {
  std::vector<const ArtifactRecord*> hits;
  for (const auto& [id, r] : shadow) {
    if (q.kind && r.kind != *q.kind) continue;
    if (q.time_range && (r.created_at < q.time_range->from || r.created_at > q.time_range->to)) continue;
    if (q.region) {
      if (!r.bounds) continue;
      bool apart = false;
      for (int a = 0; a < 3; ++a)
        apart |= r.bounds->max[a] < q.region->min[a] || q.region->max[a] < r.bounds->min[a];
      if (apart) continue;
    }
    hits.push_back(&r);
  }
  std::sort(hits.begin(), hits.end(), [](const ArtifactRecord* a, const ArtifactRecord* b) {
    return std::tie(a->created_at, a->id) < std::tie(b->created_at, b->id);
  });
  std::vector<RecordId> out;
  for (const auto* r : hits) out.push_back(r->id);
  return out;
}

void flip_byte(const std::filesystem::path& p, std::uint64_t offset) {
  const int fd = ::open(p.c_str(), O_RDWR);
  ASSERT_GE(fd, 0);
  std::uint8_t b = 0;
  ASSERT_EQ(::pread(fd, &b, 1, static_cast<off_t>(offset)), 1);
  b ^= 0x10;
  ASSERT_EQ(::pwrite(fd, &b, 1, static_cast<off_t>(offset)), 1);
  ::close(fd);
}

std::uint64_t find_bytes(const Bytes& hay, const Bytes& needle) {
  auto it = std::search(hay.begin(), hay.end(), needle.begin(), needle.end());
  return it == hay.end() ? hay.size() : static_cast<std::uint64_t>(it - hay.begin());
}

Bytes slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

// (id, version, hash) for every latest record; a comparable state fingerprint.
std::set<std::tuple<RecordId, std::uint64_t, Digest>> state_of(const Store& s) {
  std::set<std::tuple<RecordId, std::uint64_t, Digest>> out;
  for (const auto& h : s.scan_latest()) out.emplace(h.id, h.version, h.content_hash);
  return out;
}

}  // namespace

TEST(Store, PutGetRoundtrip) {
  TempDir dir;
  Store s(dir.path());
  const auto r = numbered(1, 1000);
  const auto res = s.put(r);
  EXPECT_EQ(res.version, 1u);
  const auto got = s.get(r.id);
  EXPECT_EQ(got.payload, r.payload);
  EXPECT_EQ(got.kind, r.kind);
  EXPECT_EQ(got.created_at, r.created_at);
  EXPECT_TRUE(got.hash_matches());
}

TEST(Store, VersionsIncreasePerId) {
  TempDir dir;
  Store s(dir.path());
  const RecordId id = derived_id("v", 0);
  EXPECT_EQ(s.put(make_record(id, ArtifactKind::Tag, to_bytes("first"))).version, 1u);
  EXPECT_EQ(s.put(make_record(id, ArtifactKind::Tag, to_bytes("second"))).version, 2u);
  EXPECT_EQ(to_text(s.get(id).payload), "second");
  EXPECT_EQ(to_text(s.get(id, 1).payload), "first");
  EXPECT_EQ(to_text(s.get(id, 2).payload), "second");
  EXPECT_CODE(s.get(id, 3), ErrorCode::NotFound);
}

TEST(Store, UnknownIdIsNotFound) {
  TempDir dir;
  Store s(dir.path());
  EXPECT_CODE(s.get(derived_id("nope", 1)), ErrorCode::NotFound);
  EXPECT_FALSE(s.remove(derived_id("nope", 1)));
}

TEST(Store, RejectsHashMismatchAndBadBounds) {
  TempDir dir;
  Store s(dir.path());
  auto r = numbered(2);
  r.payload[0] ^= 1;
  EXPECT_CODE(s.put(r), ErrorCode::ChecksumMismatch);
  auto b = numbered(3);
  b.bounds = Aabb{Vec3(1, 0, 0), Vec3(0, 1, 1)};
  EXPECT_CODE(s.put(b), ErrorCode::InvalidRegion);
  EXPECT_EQ(s.size(), 0u);
}

TEST(Store, CapacityLimitGivesStorageFull) {
  TempDir dir;
  StoreOptions o;
  o.capacity_bytes = 4096;
  Store s(dir.path(), o);
  EXPECT_NO_THROW(s.put(numbered(1, 1000)));
  EXPECT_CODE(s.put(numbered(2, 4000)), ErrorCode::StorageFull);
  EXPECT_CODE(s.get(derived_id("rec", 2)), ErrorCode::NotFound);
  // A failed put leaves the store usable.
  EXPECT_NO_THROW(s.put(numbered(3, 100)));
  EXPECT_EQ(s.size(), 2u);
}

TEST(Store, RemoveSurvivesReopen) {
  TempDir dir;
  {
    Store s(dir.path());
    s.put(numbered(1));
    s.put(numbered(2));
    EXPECT_TRUE(s.remove(derived_id("rec", 1)));
  }
  Store s(dir.path());
  EXPECT_EQ(s.size(), 1u);
  EXPECT_CODE(s.get(derived_id("rec", 1)), ErrorCode::NotFound);
}

TEST(Store, BitFlipOnDiskIsCorruptRecord) {
  TempDir dir;
  Store s(dir.path());
  const auto r = numbered(5, 256);
  s.put(r);
  s.put(numbered(6, 256));
  const auto wal = dir.path() / Store::kWalName;
  const std::uint64_t at = find_bytes(slurp(wal), r.payload);
  ASSERT_LT(at, std::filesystem::file_size(wal));
  flip_byte(wal, at + 100);
  EXPECT_CODE(s.get(r.id), ErrorCode::CorruptRecord);
  Query q;
  q.kind = r.kind;
  EXPECT_CODE(s.query(q), ErrorCode::CorruptRecord);
  q.with_payload = false;
  EXPECT_EQ(s.query(q).size(), 1u);
  EXPECT_NO_THROW(s.get(derived_id("rec", 6)));
}

TEST(Store, BitFlipAfterSnapshotIsCorruptRecord) {
  TempDir dir;
  Store s(dir.path());
  const auto r = numbered(7, 256);
  s.put(r);
  s.snapshot();
  const auto snap = dir.path() / Store::kSnapshotName;
  const std::uint64_t at = find_bytes(slurp(snap), r.payload);
  ASSERT_LT(at, std::filesystem::file_size(snap));
  flip_byte(snap, at + 3);
  EXPECT_CODE(s.get(r.id), ErrorCode::CorruptRecord);
}

TEST(Store, EmptyStoreQueriesReturnEmpty) {
  TempDir dir;
  Store s(dir.path());
  Query q;
  q.kind = ArtifactKind::Defect;
  EXPECT_TRUE(s.query(q).empty());
  q = Query{};
  q.region = Aabb{Vec3(-100, -100, -100), Vec3(100, 100, 100)};
  EXPECT_TRUE(s.query(q).empty());
}

TEST(Store, QueryValidation) {
  TempDir dir;
  Store s(dir.path());
  EXPECT_CODE(s.query(Query{}), ErrorCode::InvalidArgument);
  Query q;
  q.region = Aabb{Vec3(0, 0, 1), Vec3(1, 1, 0)};
  EXPECT_CODE(s.query(q), ErrorCode::InvalidRegion);
}

TEST(Store, WholeSceneDefectQueryReturnsAllDefects) {
  TempDir dir;
  Store s(dir.path());
  std::mt19937_64 rng(1);
  std::size_t defects = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    auto r = numbered(i);
    r.bounds = random_box(rng, 5.0, 1.0);
    defects += r.kind == ArtifactKind::Defect;
    s.put(r);
  }
  Query q;
  q.kind = ArtifactKind::Defect;
  q.region = Aabb{Vec3(-10, -10, -10), Vec3(10, 10, 10)};
  const auto res = s.query(q);
  EXPECT_EQ(res.size(), defects);
  for (const auto& r : res) EXPECT_EQ(r.kind, ArtifactKind::Defect);
}

// 1000 random-bounds records, 100 random boxes (plus kind/time filters),
// against a linear scan written independently of the store.
TEST(StoreProperty, QueriesMatchBruteForce) {
  TempDir dir;
  StoreOptions o;
  o.sync = false;
  Store s(dir.path(), o);
  std::mt19937_64 rng(2);
  std::map<RecordId, ArtifactRecord> shadow;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    auto r = numbered(i, 16);
    if (i % 10 != 0) r.bounds = random_box(rng, 10.0, 3.0);
    s.put(r);
    r.payload.clear();
    shadow[r.id] = r;
  }
  std::uniform_int_distribution<int> kind(0, 4);
  std::uniform_int_distribution<std::int64_t> t(1'000'000, 1'001'000);
  for (int k = 0; k < 100; ++k) {
    Query q;
    q.region = random_box(rng, 12.0, 6.0);
    q.with_payload = false;
    ASSERT_EQ(ids_of(s.query(q)), brute_force(shadow, q)) << k;
    q.kind = static_cast<ArtifactKind>(kind(rng));
    ASSERT_EQ(ids_of(s.query(q)), brute_force(shadow, q)) << k;
    const auto a = t(rng), b = t(rng);
    q.time_range = TimeRange{std::min(a, b), std::max(a, b)};
    ASSERT_EQ(ids_of(s.query(q)), brute_force(shadow, q)) << k;
    q.region.reset();
    ASSERT_EQ(ids_of(s.query(q)), brute_force(shadow, q)) << k;
  }
  // Degenerate box: a single point on a record corner still overlaps.
  const auto& any = shadow.begin()->second.bounds ? shadow.begin()->second : std::next(shadow.begin())->second;
  Query corner;
  corner.region = Aabb{any.bounds->max, any.bounds->max};
  corner.with_payload = false;
  const auto ids = ids_of(s.query(corner));
  EXPECT_NE(std::find(ids.begin(), ids.end(), any.id), ids.end());
  EXPECT_EQ(ids, brute_force(shadow, corner));
}

// Index coherence under a random mix of puts (moving bounds), removals,
// snapshots and reopens.
TEST(StoreProperty, IndexCoherentAfterRandomOperations) {
  TempDir dir;
  StoreOptions o;
  o.sync = false;
  o.cell_size = 0.5;
  std::mt19937_64 rng(3);
  std::map<RecordId, ArtifactRecord> shadow;
  auto store = std::make_unique<Store>(dir.path(), o);
  std::uniform_int_distribution<int> op(0, 99);
  std::uniform_int_distribution<std::uint64_t> which(0, 149);
  for (int step = 0; step < 3000; ++step) {
    const int c = op(rng);
    const std::uint64_t i = which(rng);
    if (c < 70) {
      auto r = make_record(derived_id("mix", i), static_cast<ArtifactKind>(i % 5), payload_for(step, 8),
                           std::nullopt, std::nullopt, 5 + step);
      if (c % 4 != 0) r.bounds = random_box(rng, 4.0, 2.0);
      store->put(r);
      r.payload.clear();
      shadow[r.id] = r;
    } else if (c < 90) {
      EXPECT_EQ(store->remove(derived_id("mix", i)), shadow.erase(derived_id("mix", i)) == 1);
    } else if (c < 95) {
      store->snapshot();
    } else {
      store.reset();
      store = std::make_unique<Store>(dir.path(), o);
    }
    if (step % 50 == 0) {
      for (int k = 0; k < 5; ++k) {
        Query q;
        q.region = random_box(rng, 5.0, 3.0);
        q.with_payload = false;
        ASSERT_EQ(ids_of(store->query(q)), brute_force(shadow, q)) << "step " << step;
      }
    }
  }
  EXPECT_EQ(store->size(), shadow.size());
}

TEST(Recover, EmptyLogGivesEmptyStore) {
  TempDir dir;
  write_wal(dir.path() / Store::kWalName, {});
  Store s(dir.path());
  EXPECT_EQ(s.size(), 0u);
  EXPECT_FALSE(s.recovered_torn_tail());
}

TEST(Recover, CorruptHeaderIsUnreadableLog) {
  TempDir dir;
  {
    std::ofstream out(dir.path() / Store::kWalName, std::ios::binary);
    out << "TFWALv02garbage!";
  }
  EXPECT_CODE(Store s(dir.path()), ErrorCode::UnreadableLog);
  {
    std::ofstream out(dir.path() / Store::kWalName, std::ios::binary);
    out << "TF";
  }
  EXPECT_CODE(Store s(dir.path()), ErrorCode::UnreadableLog);
}

// Truncating a valid log of N+1 entries anywhere inside the last entry
// yields exactly the state after N entries.
TEST(Recover, TornTailAtRandomByteDropsOnlyLastEntry) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    TempDir dir;
    std::uniform_int_distribution<std::uint64_t> count(1, 30);
    const std::uint64_t n = count(rng);
    std::vector<std::uint64_t> ends;
    std::map<RecordId, ArtifactRecord> shadow;
    {
      StoreOptions o;
      o.sync = false;
      Store s(dir.path(), o);
      for (std::uint64_t i = 0; i <= n; ++i) {
        auto r = numbered(i % 7 + 100 * trial, 40 + i);
        s.put(r);
        if (i < n) shadow[r.id] = r;
        ends.push_back(std::filesystem::file_size(dir.path() / Store::kWalName));
      }
    }
    std::uniform_int_distribution<std::uint64_t> cut(ends[n - 1], ends[n] - 1);
    const auto at = cut(rng);
    std::filesystem::resize_file(dir.path() / Store::kWalName, at);
    Store s(dir.path());
    EXPECT_TRUE(s.recovered_torn_tail() || at == ends[n - 1]);
    ASSERT_EQ(s.size(), shadow.size());
    for (const auto& [id, r] : shadow) ASSERT_EQ(s.get(id).payload, r.payload);
    EXPECT_EQ(s.last_sequence(), n);
    // The torn bytes are discarded, so the next put lands right after entry N.
    s.put(numbered(999));
    EXPECT_EQ(s.last_sequence(), n + 1);
  }
}

TEST(Recover, CrcFailureInMiddleStopsReplay) {
  TempDir dir;
  std::vector<std::uint64_t> ends;
  {
    Store s(dir.path());
    for (std::uint64_t i = 0; i < 5; ++i) {
      s.put(numbered(i, 100));
      ends.push_back(std::filesystem::file_size(dir.path() / Store::kWalName));
    }
  }
  flip_byte(dir.path() / Store::kWalName, ends[1] + 30);
  Store s(dir.path());
  EXPECT_TRUE(s.recovered_torn_tail());
  EXPECT_EQ(s.size(), 2u);
}

TEST(Recover, Idempotent) {
  TempDir dir;
  {
    StoreOptions o;
    o.sync = false;
    Store s(dir.path(), o);
    for (std::uint64_t i = 0; i < 40; ++i) s.put(numbered(i % 15, 30));
    s.remove(derived_id("rec", 3));
  }
  std::filesystem::resize_file(dir.path() / Store::kWalName, std::filesystem::file_size(dir.path() / Store::kWalName) - 5);
  std::set<std::tuple<RecordId, std::uint64_t, Digest>> first;
  {
    Store s(dir.path());
    first = state_of(s);
  }
  {
    Store s(dir.path());
    EXPECT_FALSE(s.recovered_torn_tail());
    EXPECT_EQ(state_of(s), first);
  }
  // Re-serialising the replayed entries into a fresh log recovers the same state.
  TempDir copy;
  write_wal(copy.path() / Store::kWalName, read_wal(dir.path() / Store::kWalName));
  Store s(copy.path());
  EXPECT_EQ(state_of(s), first);
}

TEST(Snapshot, ReopenFromSnapshotAndWal) {
  TempDir dir;
  std::set<std::tuple<RecordId, std::uint64_t, Digest>> before;
  {
    Store s(dir.path());
    for (std::uint64_t i = 0; i < 20; ++i) s.put(numbered(i % 8));
    s.snapshot();
    EXPECT_EQ(std::filesystem::file_size(dir.path() / Store::kWalName), kWalHeaderSize);
    for (std::uint64_t i = 0; i < 5; ++i) s.put(numbered(i));
    s.remove(derived_id("rec", 6));
    before = state_of(s);
  }
  Store s(dir.path());
  EXPECT_EQ(state_of(s), before);
  EXPECT_EQ(s.last_sequence(), 26u);
  EXPECT_EQ(to_text(s.get(derived_id("rec", 1), 1).payload), to_text(numbered(1).payload));
  EXPECT_EQ(s.get(derived_id("rec", 1)).version, 4u);
}

TEST(Snapshot, AutomaticSnapshotsKeepWalShort) {
  TempDir dir;
  StoreOptions o;
  o.snapshot_every = 10;
  o.sync = false;
  {
    Store s(dir.path(), o);
    for (std::uint64_t i = 0; i < 95; ++i) s.put(numbered(i));
  }
  EXPECT_TRUE(std::filesystem::exists(dir.path() / Store::kSnapshotName));
  EXPECT_EQ(read_wal(dir.path() / Store::kWalName).size(), 5u);
  Store s(dir.path(), o);
  EXPECT_EQ(s.size(), 95u);
}

TEST(Snapshot, CorruptSnapshotIsUnreadable) {
  TempDir dir;
  {
    Store s(dir.path());
    s.put(numbered(1));
    s.snapshot();
  }
  flip_byte(dir.path() / Store::kSnapshotName, 2);
  EXPECT_CODE(Store s(dir.path()), ErrorCode::UnreadableLog);
}

namespace {

// Child: opens the store and puts records start.. in order, writing each
// index to `fd` after put returns. Never returns.
[[noreturn]] void writer_child(const std::filesystem::path& dir, int fd, std::uint64_t start, std::uint64_t count,
                               std::size_t snapshot_every) {
  try {
    StoreOptions o;
    o.snapshot_every = snapshot_every;
    Store s(dir, o);
    for (std::uint64_t i = start; i < start + count; ++i) {
      s.put(numbered(i, 32 + i % 200));
      if (::write(fd, &i, sizeof i) != sizeof i) ::_exit(3);
    }
  } catch (...) {
    ::_exit(2);
  }
  ::_exit(0);
}

struct CrashRun {
  std::uint64_t acked = 0;  // records 0..acked-1 were acknowledged
  bool exited = false;
};

CrashRun run_and_kill(const std::filesystem::path& dir, std::uint64_t start, std::uint64_t count,
                      std::uint64_t kill_after, std::size_t snapshot_every) {
  int fds[2];
  if (::pipe(fds) != 0) throw std::runtime_error("pipe");
  const pid_t pid = ::fork();
  if (pid == 0) {
    ::close(fds[0]);
    writer_child(dir, fds[1], start, count, snapshot_every);
  }
  ::close(fds[1]);
  CrashRun run;
  run.acked = start;
  std::uint64_t idx = 0;
  while (run.acked < start + kill_after && ::read(fds[0], &idx, sizeof idx) == sizeof idx) run.acked = idx + 1;
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  run.exited = WIFEXITED(status);
  ::close(fds[0]);
  return run;
}

// Every acknowledged record is present with the right bytes, and nothing
// beyond the records the child attempted exists.
void check_after_crash(const std::filesystem::path& dir, std::uint64_t acked, std::uint64_t attempted_end) {
  Store s(dir);
  for (std::uint64_t i = 0; i < acked; ++i) {
    const auto expect = numbered(i, 32 + i % 200);
    const auto got = s.get(expect.id);
    ASSERT_EQ(got.content_hash, expect.content_hash) << i;
    ASSERT_EQ(got.payload, expect.payload) << i;
  }
  EXPECT_GE(s.size(), acked);
  EXPECT_LE(s.size(), attempted_end);
}

}  // namespace

TEST(Durability, TenThousandPutsThenKill) {
  TempDir dir;
  const std::uint64_t n = 10000;
  const auto run = run_and_kill(dir.path(), 0, n, n, 0);
  ASSERT_EQ(run.acked, n);
  check_after_crash(dir.path(), n, n);
}

TEST(Durability, CrashPointSweep) {
  TempDir dir;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::uint64_t> after(0, 40);
  std::uint64_t acked = 0;
  for (int crash = 0; crash < 25; ++crash) {
    const auto run = run_and_kill(dir.path(), acked, 60, after(rng), crash % 3 == 0 ? 7 : 0);
    check_after_crash(dir.path(), run.acked, run.acked + 60);
    // Resume from the recovered state so later rounds also exercise old data.
    Store s(dir.path());
    acked = s.size();
  }
  EXPECT_GT(acked, 0u);
}

// Readers see per-id versions that only move forward, and each observed
// payload is the one written for that version.
TEST(Concurrency, ReadersSeeMonotoneVersions) {
  TempDir dir;
  StoreOptions o;
  o.sync = false;
  o.snapshot_every = 97;
  Store s(dir.path(), o);
  const int ids = 4, versions = 300;
  for (int k = 0; k < ids; ++k) s.put(make_record(derived_id("c", k), ArtifactKind::Tag, to_bytes("1")));
  std::atomic<bool> done{false};
  std::atomic<int> violations{0}, reads{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 3; ++t) {
    readers.emplace_back([&, t] {
      std::vector<std::uint64_t> last(ids, 0);
      while (!done.load()) {
        for (int k = 0; k < ids; ++k) {
          const auto r = s.get(derived_id("c", k));
          if (r.version < last[k] || to_text(r.payload) != std::to_string(r.version)) ++violations;
          last[k] = r.version;
          ++reads;
        }
        if (t == 0) {
          Query q;
          q.kind = ArtifactKind::Tag;
          if (s.query(q).size() != static_cast<std::size_t>(ids)) ++violations;
        }
      }
    });
  }
  std::vector<std::thread> writers;
  for (int k = 0; k < ids; ++k) {
    writers.emplace_back([&, k] {
      for (int v = 2; v <= versions; ++v)
        s.put(make_record(derived_id("c", k), ArtifactKind::Tag, to_bytes(std::to_string(v))));
    });
  }
  for (auto& w : writers) w.join();
  done = true;
  for (auto& r : readers) r.join();
  EXPECT_EQ(violations.load(), 0);
  EXPECT_GT(reads.load(), 0);
  for (int k = 0; k < ids; ++k) EXPECT_EQ(s.get(derived_id("c", k)).version, static_cast<std::uint64_t>(versions));
  EXPECT_EQ(s.last_sequence(), static_cast<std::uint64_t>(ids * versions));
}
