#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "twinfuse/geometry.hpp"

namespace twinfuse::slam {

/// Running per-voxel centroids. Output order is sorted by voxel key so the
/// result does not depend on hash iteration order.
class VoxelAccumulator {
 public:
  explicit VoxelAccumulator(double voxel) : voxel_(voxel) {
    if (!(voxel > 0)) throw Error(ErrorCode::InvalidArgument, "voxel must be > 0");
  }

  void add(const Vec3& p, const Rgb* color = nullptr) {
    const Key k{static_cast<std::int64_t>(std::floor(p.x() / voxel_)),
                static_cast<std::int64_t>(std::floor(p.y() / voxel_)),
                static_cast<std::int64_t>(std::floor(p.z() / voxel_))};
    Cell& c = cells_[k];
    c.sum += p;
    if (color) {
      c.rgb[0] += color->r;
      c.rgb[1] += color->g;
      c.rgb[2] += color->b;
    }
    ++c.count;
  }

  void add(const PointCloud& cloud) {
    const bool color = cloud.colors.has_value();
    for (std::size_t i = 0; i < cloud.points.size(); ++i) add(cloud.points[i], color ? &(*cloud.colors)[i] : nullptr);
    any_color_ = any_color_ || color;
    all_color_ = all_color_ && color;
  }

  std::size_t size() const { return cells_.size(); }

  PointCloud cloud() const {
    std::vector<const std::pair<const Key, Cell>*> order;
    order.reserve(cells_.size());
    for (const auto& kv : cells_) order.push_back(&kv);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->first < b->first; });
    PointCloud out;
    out.points.reserve(order.size());
    const bool color = any_color_ && all_color_;
    if (color) out.colors.emplace().reserve(order.size());
    for (const auto* kv : order) {
      const Cell& c = kv->second;
      const double n = static_cast<double>(c.count);
      out.points.push_back(c.sum / n);
      if (color) {
        out.colors->push_back(Rgb{static_cast<std::uint8_t>(std::lround(c.rgb[0] / n)),
                                  static_cast<std::uint8_t>(std::lround(c.rgb[1] / n)),
                                  static_cast<std::uint8_t>(std::lround(c.rgb[2] / n))});
      }
    }
    return out;
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
  struct Cell {
    Vec3 sum = Vec3::Zero();
    std::array<double, 3> rgb{0, 0, 0};
    std::size_t count = 0;
  };

  double voxel_;
  bool any_color_ = false;
  bool all_color_ = true;
  std::unordered_map<Key, Cell, KeyHash> cells_;
};

/// One point per occupied voxel at the centroid of its members.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  VoxelAccumulator acc(voxel);
  acc.add(cloud);
  return acc.cloud();
}

}  // namespace twinfuse::slam
