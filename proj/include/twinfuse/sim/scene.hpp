#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "twinfuse/geometry.hpp"

namespace twinfuse::sim {

struct Box {
  Vec3 min;
  Vec3 max;
  std::string label;

  Aabb bounds() const { return Aabb{min, max}; }
};

struct Landmark {
  int id = 0;
  Vec3 position;
};

/// A surface defect painted at a known world point (used by the scripted detector).
struct PlantedDefect {
  std::string label;
  Vec3 position;
};

struct SceneSpec {
  std::vector<Box> boxes;
  std::vector<Landmark> landmarks;
  std::vector<PlantedDefect> defects;

  void validate() const {
    for (const auto& b : boxes) {
      if (!(b.min.array() < b.max.array()).all()) {
        throw Error(ErrorCode::InvalidArgument, "box '" + b.label + "' has min >= max");
      }
    }
    std::set<int> ids;
    for (const auto& l : landmarks) {
      if (!ids.insert(l.id).second) throw Error(ErrorCode::InvalidArgument, "duplicate landmark id");
    }
  }

  const Box* find(const std::string& label) const {
    for (const auto& b : boxes)
      if (b.label == label) return &b;
    return nullptr;
  }
};

struct RayHit {
  double t = std::numeric_limits<double>::infinity();
  int box = -1;
};

namespace detail {

inline std::optional<double> slab(const Box& box, const Vec3& origin, const Vec3& dir, const Vec3& inv,
                                  double t_min) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < box.min[a] || origin[a] > box.max[a]) return std::nullopt;
      continue;
    }
    double ta = (box.min[a] - origin[a]) * inv[a];
    double tb = (box.max[a] - origin[a]) * inv[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  if (t0 > t_min) return t0;
  if (t1 > t_min) return t1;  // origin inside the box: exit face
  return std::nullopt;
}

}  // namespace detail

/// Slab test. Returns the smallest ray parameter t > `t_min` where the ray
/// origin + t*dir crosses the surface of `box`.
inline std::optional<double> intersect(const Box& box, const Vec3& origin, const Vec3& dir,
                                       double t_min = 1e-9) {
  return detail::slab(box, origin, dir, dir.cwiseInverse(), t_min);
}

inline RayHit cast(const SceneSpec& scene, const Vec3& origin, const Vec3& dir) {
  RayHit hit;
  const Vec3 inv = dir.cwiseInverse();
  for (int i = 0; i < static_cast<int>(scene.boxes.size()); ++i) {
    if (auto t = detail::slab(scene.boxes[i], origin, dir, inv, 1e-9); t && *t < hit.t) {
      hit.t = *t;
      hit.box = i;
    }
  }
  return hit;
}

/// Distance from `p` to the closest box surface in the scene.
inline double distance_to_surfaces(const SceneSpec& scene, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& b : scene.boxes) {
    Vec3 outside = (b.min - p).cwiseMax(p - b.max).cwiseMax(Vec3::Zero());
    double d;
    if (outside.squaredNorm() > 0) {
      d = outside.norm();
    } else {
      Vec3 in = (p - b.min).cwiseMin(b.max - p);
      d = in.minCoeff();
    }
    best = std::min(best, d);
  }
  return best;
}

}  // namespace twinfuse::sim
