#pragma once

// 2D detections to 3D defect entities: median-depth back-projection, greedy
// same-label radius clustering, and upsert into the store.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "twinfuse/fusion/store.hpp"
#include "twinfuse/geometry.hpp"
#include "twinfuse/sim/scene.hpp"

namespace twinfuse::defect {

/// Pixel-coordinate box; integer pixel centres with u0 <= u <= u1 and
/// v0 <= v <= v1 are inside.
struct Detection2D {
  std::uint64_t frame_id = 0;
  double u0 = 0, v0 = 0, u1 = 0, v1 = 0;
  std::string label;
  double confidence = 0;

  void validate(const CameraIntrinsics& k) const {
    if (!(u0 < u1 && v0 < v1)) throw Error(ErrorCode::InvalidArgument, "bbox must have u0<u1 and v0<v1");
    if (u0 < 0 || v0 < 0 || u1 > k.width - 1 || v1 > k.height - 1)
      throw Error(ErrorCode::OutOfBounds, "bbox outside image");
    if (!(confidence >= 0 && confidence <= 1)) throw Error(ErrorCode::InvalidArgument, "confidence outside [0,1]");
  }
};

inline nlohmann::json to_json(const Detection2D& d) {
  return {{"frame_id", d.frame_id}, {"bbox", {d.u0, d.v0, d.u1, d.v1}}, {"label", d.label}, {"confidence", d.confidence}};
}

inline Detection2D detection_from_json(const nlohmann::json& j) {
  try {
    Detection2D d;
    d.frame_id = j.at("frame_id").get<std::uint64_t>();
    const auto& b = j.at("bbox");
    if (!b.is_array() || b.size() != 4) throw Error(ErrorCode::MalformedPayload, "bbox must have 4 numbers");
    d.u0 = b[0].get<double>();
    d.v0 = b[1].get<double>();
    d.u1 = b[2].get<double>();
    d.v1 = b[3].get<double>();
    d.label = j.at("label").get<std::string>();
    d.confidence = j.at("confidence").get<double>();
    if (!std::isfinite(d.u0) || !std::isfinite(d.v0) || !std::isfinite(d.u1) || !std::isfinite(d.v1) ||
        !(d.u0 < d.u1 && d.v0 < d.v1) || !(d.confidence >= 0 && d.confidence <= 1) || d.label.empty())
      throw Error(ErrorCode::MalformedPayload, "invalid detection fields");
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedPayload, e.what());
  }
}

/// World-frame anchor of a detection: median valid depth inside the bbox,
/// back-projected through the bbox centre.
inline Vec3 locate(const Detection2D& det, const DepthFrame& frame, const CameraIntrinsics& k, const Pose& pose) {
  if (frame.width != k.width || frame.height != k.height)
    throw Error(ErrorCode::ResolutionMismatch, "frame does not match intrinsics");
  det.validate(k);
  std::vector<std::uint16_t> d;
  const int ua = static_cast<int>(std::ceil(det.u0)), ub = static_cast<int>(std::floor(det.u1));
  const int va = static_cast<int>(std::ceil(det.v0)), vb = static_cast<int>(std::floor(det.v1));
  for (int v = va; v <= vb; ++v)
    for (int u = ua; u <= ub; ++u)
      if (auto z = frame.at(u, v); z != 0) d.push_back(z);
  if (d.empty()) throw Error(ErrorCode::NoValidDepth, "no valid depth inside bbox");
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  const double mm = n % 2 ? d[n / 2] : 0.5 * (double(d[n / 2 - 1]) + double(d[n / 2]));
  return apply(pose, backproject(k, 0.5 * (det.u0 + det.u1), 0.5 * (det.v0 + det.v1), mm / 1000.0));
}

struct Support {
  std::uint64_t frame_id = 0;
  Vec3 anchor = Vec3::Zero();
  double confidence = 0;
};

struct DefectRecord {
  std::uint64_t defect_id = 0;
  std::string label;
  Vec3 centroid = Vec3::Zero();
  std::vector<Support> support;
  double confidence = 0;
};

inline constexpr double kMaxConfidence = 0.999;

inline nlohmann::json to_json(const DefectRecord& r) {
  nlohmann::json sup = nlohmann::json::array();
  for (const auto& s : r.support)
    sup.push_back({{"frame_id", s.frame_id}, {"anchor", {s.anchor.x(), s.anchor.y(), s.anchor.z()}},
                   {"confidence", s.confidence}});
  return {{"defect_id", r.defect_id},
          {"label", r.label},
          {"centroid", {r.centroid.x(), r.centroid.y(), r.centroid.z()}},
          {"confidence", r.confidence},
          {"support", sup}};
}

inline DefectRecord defect_from_json(const nlohmann::json& j) {
  DefectRecord r;
  r.defect_id = j.at("defect_id").get<std::uint64_t>();
  r.label = j.at("label").get<std::string>();
  const auto& c = j.at("centroid");
  r.centroid = Vec3(c[0].get<double>(), c[1].get<double>(), c[2].get<double>());
  r.confidence = j.at("confidence").get<double>();
  for (const auto& s : j.at("support")) {
    const auto& a = s.at("anchor");
    r.support.push_back({s.at("frame_id").get<std::uint64_t>(),
                         Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>()),
                         s.at("confidence").get<double>()});
  }
  return r;
}

/// Greedy online clustering. Defect ids count up from 1 in founding order.
class Clusterer {
 public:
  explicit Clusterer(double radius = 0.1) : radius_(radius) {
    if (!(radius > 0)) throw Error(ErrorCode::InvalidArgument, "cluster radius must be > 0");
  }

  double radius() const { return radius_; }
  const std::vector<DefectRecord>& records() const { return records_; }

  /// Adds one anchor; returns the index of the cluster it joined or founded.
  std::size_t add(const Vec3& anchor, const std::string& label, double confidence, std::uint64_t frame_id) {
    std::size_t best = records_.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      if (r.label != label) continue;
      const double d = (r.centroid - anchor).norm();
      if (d >= radius_) continue;
      // records_ is ordered by defect_id, so an equidistant later cluster never wins
      if (d < best_d - 1e-9) {
        best = i;
        best_d = d;
      }
    }
    if (best == records_.size()) {
      DefectRecord r;
      r.defect_id = next_id_++;
      r.label = label;
      records_.push_back(std::move(r));
    }
    DefectRecord& r = records_[best];
    r.support.push_back({frame_id, anchor, confidence});
    refresh(r);
    return best;
  }

 private:
  static void refresh(DefectRecord& r) {
    double wsum = 0;
    Vec3 acc = Vec3::Zero();
    double miss = 1.0;
    for (const auto& s : r.support) {
      wsum += s.confidence;
      acc += s.confidence * s.anchor;
      miss *= 1.0 - s.confidence;
    }
    if (wsum > 0) {
      r.centroid = acc / wsum;
    } else {
      r.centroid = Vec3::Zero();
      for (const auto& s : r.support) r.centroid += s.anchor;
      r.centroid /= static_cast<double>(r.support.size());
    }
    r.confidence = std::min(1.0 - miss, kMaxConfidence);
  }

  double radius_;
  std::uint64_t next_id_ = 1;
  std::vector<DefectRecord> records_;
};

/// Batch form of the clusterer over an ordered anchor stream.
struct Anchor {
  Vec3 point = Vec3::Zero();
  std::string label;
  double confidence = 0;
  std::uint64_t frame_id = 0;
};

inline std::vector<DefectRecord> cluster(const std::vector<Anchor>& anchors, double radius = 0.1) {
  Clusterer c(radius);
  for (const auto& a : anchors) c.add(a.point, a.label, a.confidence, a.frame_id);
  return c.records();
}

inline fusion::RecordId defect_record_id(const std::string& scope, std::uint64_t defect_id) {
  return fusion::derived_id("defect:" + scope, defect_id);
}

/// Upserts the defect as a kind=defect record bounded by centroid +/- radius.
inline fusion::PutResult register_defect(const DefectRecord& r, fusion::Store& store, double radius,
                                         const std::string& scope = "") {
  const std::string text = to_json(r).dump();
  const Vec3 half = Vec3::Constant(radius);
  return store.put(fusion::make_record(defect_record_id(scope, r.defect_id), fusion::ArtifactKind::Defect,
                                       fusion::to_bytes(text), Aabb{r.centroid - half, r.centroid + half}));
}

/// Stand-in for an image detector: each planted defect visible from the true
/// pose yields a bbox of +/- `half_size` pixels around its projection.
struct ScriptedDetectorConfig {
  double half_size = 8.0;
  double confidence = 0.8;
  double min_depth = 0.1;
};

inline std::vector<Detection2D> scripted_detections(const sim::SceneSpec& scene, const Pose& true_pose,
                                                    const CameraIntrinsics& k, std::uint64_t frame_id,
                                                    const ScriptedDetectorConfig& cfg = {}) {
  std::vector<Detection2D> out;
  const Pose w2c = true_pose.inverse();
  for (const auto& d : scene.defects) {
    const Vec3 pc = w2c * d.position;
    if (pc.z() <= cfg.min_depth) continue;
    const Pixel px = project(k, pc);
    if (px.u - cfg.half_size < 0 || px.v - cfg.half_size < 0 || px.u + cfg.half_size > k.width - 1 ||
        px.v + cfg.half_size > k.height - 1)
      continue;
    const Vec3 ray = d.position - true_pose.translation;
    const double range = ray.norm();
    const sim::RayHit hit = sim::cast(scene, true_pose.translation, ray / range);
    if (hit.box >= 0 && hit.t < range - 1e-3) continue;
    out.push_back(Detection2D{frame_id, px.u - cfg.half_size, px.v - cfg.half_size, px.u + cfg.half_size,
                              px.v + cfg.half_size, d.label, cfg.confidence});
  }
  return out;
}

}  // namespace twinfuse::defect
