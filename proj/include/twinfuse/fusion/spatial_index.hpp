#pragma once

#include <algorithm>
#include <array>
#include <cstring>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "twinfuse/fusion/bytes.hpp"
#include "twinfuse/geometry.hpp"

namespace twinfuse::fusion {

struct RecordIdHash {
  std::size_t operator()(const RecordId& id) const noexcept {
    std::uint64_t h;
    std::memcpy(&h, id.data(), 8);
    return static_cast<std::size_t>(h);
  }
};

/// Uniform grid over 3D space. A record id is stored in every cell its bounds
/// overlap; records spanning more than `max_cells_per_record` cells go to an
/// overflow list that every query inspects.
class SpatialIndex {
 public:
  explicit SpatialIndex(double cell_size = 1.0, std::size_t max_cells_per_record = 1 << 14)
      : cell_(cell_size), max_cells_(max_cells_per_record) {
    if (!(cell_size > 0)) throw Error(ErrorCode::InvalidArgument, "cell_size must be > 0");
  }

  double cell_size() const { return cell_; }

  void insert(const RecordId& id, const Aabb& b) {
    if (cell_count(b) > max_cells_) {
      overflow_.insert(id);
      return;
    }
    for_each_cell(b, [&](const Key& k) { cells_[k].insert(id); });
  }

  void erase(const RecordId& id, const Aabb& b) {
    if (overflow_.erase(id)) return;
    for_each_cell(b, [&](const Key& k) {
      auto it = cells_.find(k);
      if (it == cells_.end()) return;
      it->second.erase(id);
      if (it->second.empty()) cells_.erase(it);
    });
  }

  /// Ids whose cells intersect the region's cells: a superset of the exact
  /// overlap set, which callers filter.
  void candidates(const Aabb& region, std::unordered_set<RecordId, RecordIdHash>& out) const {
    out.insert(overflow_.begin(), overflow_.end());
    if (cell_count(region) > cells_.size()) {
      for (const auto& [k, ids] : cells_) {
        if (key_in(k, region)) out.insert(ids.begin(), ids.end());
      }
      return;
    }
    for_each_cell(region, [&](const Key& k) {
      if (auto it = cells_.find(k); it != cells_.end()) out.insert(it->second.begin(), it->second.end());
    });
  }

  /// Cells currently holding `id` (test hook for the coherence invariant).
  std::vector<std::array<std::int64_t, 3>> cells_of(const RecordId& id) const {
    std::vector<std::array<std::int64_t, 3>> out;
    for (const auto& [k, ids] : cells_)
      if (ids.count(id)) out.push_back(k);
    return out;
  }

  bool in_overflow(const RecordId& id) const { return overflow_.count(id) > 0; }

  std::vector<std::array<std::int64_t, 3>> cells_for(const Aabb& b) const {
    std::vector<std::array<std::int64_t, 3>> out;
    for_each_cell(b, [&](const Key& k) { out.push_back(k); });
    return out;
  }

  void clear() {
    cells_.clear();
    overflow_.clear();
  }

 private:
  using Key = std::array<std::int64_t, 3>;
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      std::uint64_t h = 1469598103934665603ull;
      for (auto v : k) {
        h ^= static_cast<std::uint64_t>(v);
        h *= 1099511628211ull;
      }
      return static_cast<std::size_t>(h);
    }
  };

  std::int64_t coord(double x) const {
    const double c = std::floor(x / cell_);
    return static_cast<std::int64_t>(std::clamp(c, -4e15, 4e15));
  }

  std::size_t cell_count(const Aabb& b) const {
    double n = 1.0;
    for (int a = 0; a < 3; ++a) n *= static_cast<double>(coord(b.max[a]) - coord(b.min[a]) + 1);
    return n > 1e18 ? std::size_t(-1) : static_cast<std::size_t>(n);
  }

  bool key_in(const Key& k, const Aabb& b) const {
    for (int a = 0; a < 3; ++a)
      if (k[a] < coord(b.min[a]) || k[a] > coord(b.max[a])) return false;
    return true;
  }

  template <class F>
  void for_each_cell(const Aabb& b, F&& f) const {
    const Key lo{coord(b.min.x()), coord(b.min.y()), coord(b.min.z())};
    const Key hi{coord(b.max.x()), coord(b.max.y()), coord(b.max.z())};
    for (std::int64_t x = lo[0]; x <= hi[0]; ++x)
      for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
        for (std::int64_t z = lo[2]; z <= hi[2]; ++z) f(Key{x, y, z});
  }

  double cell_;
  std::size_t max_cells_;
  std::unordered_map<Key, std::unordered_set<RecordId, RecordIdHash>, KeyHash> cells_;
  std::unordered_set<RecordId, RecordIdHash> overflow_;
};

}  // namespace twinfuse::fusion
