#pragma once

// Synthetic drone scanner: trajectory interpolation with odometry drift,
// ray-cast depth frames, planar range scans and landmark observations.
//
// Every random draw comes from a generator seeded by (seed, frame_id, stream),
// so frames can be rendered in any order or in parallel.

#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "twinfuse/geometry.hpp"
#include "twinfuse/se3.hpp"
#include "twinfuse/sim/scene.hpp"

namespace twinfuse::sim {

struct MotionNoise {
  double rot_sigma = 0.0;    // radians per step, per axis
  double trans_sigma = 0.0;  // metres per step, per axis
};

struct TrajectorySpec {
  std::vector<Pose> waypoints;
  double frame_rate = 5.0;
  MotionNoise motion_noise;
  double segment_duration = 1.0;  // seconds between consecutive waypoints

  void validate() const {
    if (waypoints.size() < 2) throw Error(ErrorCode::InvalidArgument, "trajectory needs >= 2 waypoints");
    if (!(frame_rate > 0)) throw Error(ErrorCode::InvalidArgument, "frame_rate must be > 0");
    if (!(segment_duration > 0)) throw Error(ErrorCode::InvalidArgument, "segment_duration must be > 0");
  }
};

struct NoiseSpec {
  double depth_rel_sigma = 0.0;
  double outlier_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(depth_rel_sigma >= 0)) throw Error(ErrorCode::InvalidArgument, "depth_rel_sigma < 0");
    if (!(outlier_fraction >= 0 && outlier_fraction < 1))
      throw Error(ErrorCode::InvalidArgument, "outlier_fraction outside [0,1)");
  }
};

struct TrajectorySample {
  std::uint64_t frame_id = 0;
  double timestamp = 0.0;
  Pose truth;
  Pose odometry;
};

struct LandmarkObservation {
  int landmark_id = 0;
  Vec3 camera_point = Vec3::Zero();
  bool is_outlier = false;  // ground truth, for tests and evaluation only
};

namespace detail {

enum class Stream : std::uint64_t { Depth = 1, Landmarks = 2, Odometry = 3, Scan = 4 };

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t frame_id, Stream stream) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ frame_id);
  s = splitmix64(s ^ static_cast<std::uint64_t>(stream));
  return std::mt19937_64(s);
}

inline std::uint16_t quantize_mm(double metres) {
  const double mm = std::round(metres * 1000.0);
  if (!(mm > 0) || mm > 65535.0) return 0;
  return static_cast<std::uint16_t>(mm);
}

}  // namespace detail

/// Interpolated ground-truth poses plus drifting odometry poses.
inline std::vector<TrajectorySample> simulate_trajectory(const TrajectorySpec& traj, std::uint64_t seed) {
  traj.validate();
  const double total = traj.segment_duration * static_cast<double>(traj.waypoints.size() - 1);
  const auto frames = static_cast<std::size_t>(std::floor(total * traj.frame_rate + 1e-9)) + 1;
  auto rng = detail::make_rng(seed, 0, detail::Stream::Odometry);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<TrajectorySample> out;
  out.reserve(frames);
  for (std::size_t k = 0; k < frames; ++k) {
    const double t = static_cast<double>(k) / traj.frame_rate;
    auto seg = static_cast<std::size_t>(std::floor(t / traj.segment_duration));
    seg = std::min(seg, traj.waypoints.size() - 2);
    const double alpha = std::clamp((t - seg * traj.segment_duration) / traj.segment_duration, 0.0, 1.0);
    const Pose& a = traj.waypoints[seg];
    const Pose& b = traj.waypoints[seg + 1];
    Eigen::Quaterniond qa(a.rotation), qb(b.rotation);
    Pose truth{qa.slerp(alpha, qb).normalized().toRotationMatrix(),
               (1.0 - alpha) * a.translation + alpha * b.translation};

    TrajectorySample s;
    s.frame_id = k;
    s.timestamp = t;
    s.truth = truth;
    if (k == 0) {
      s.odometry = truth;
    } else {
      const Pose step = compose(out.back().truth.inverse(), truth);
      se3::Vec6 xi;
      for (int i = 0; i < 3; ++i) xi[i] = traj.motion_noise.trans_sigma * gauss(rng);
      for (int i = 3; i < 6; ++i) xi[i] = traj.motion_noise.rot_sigma * gauss(rng);
      Pose noisy_step = step;
      if (traj.motion_noise.trans_sigma > 0 || traj.motion_noise.rot_sigma > 0) {
        noisy_step = compose(step, se3::exp(xi));
      }
      s.odometry = compose(out.back().odometry, noisy_step);
    }
    out.push_back(s);
  }
  return out;
}

/// Ray-cast depth image. Depth is camera-frame Z with multiplicative
/// Gaussian noise, quantized to millimetres; misses are 0.
inline DepthFrame render_depth_frame(const SceneSpec& scene, const Pose& pose, const CameraIntrinsics& k,
                                     const NoiseSpec& noise, std::uint64_t frame_id = 0) {
  noise.validate();
  DepthFrame frame;
  frame.frame_id = frame_id;
  frame.width = k.width;
  frame.height = k.height;
  frame.depths.assign(static_cast<std::size_t>(k.width) * k.height, 0);
  auto rng = detail::make_rng(noise.seed, frame_id, detail::Stream::Depth);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Vec3 origin = pose.translation;
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Vec3 dir = pose.rotation * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      const RayHit hit = cast(scene, origin, dir);
      if (hit.box < 0) continue;
      double z = hit.t;  // ray direction has unit camera-Z, so t is the depth
      if (noise.depth_rel_sigma > 0) z *= 1.0 + noise.depth_rel_sigma * gauss(rng);
      frame.depths[static_cast<std::size_t>(v) * k.width + u] = detail::quantize_mm(z);
    }
  }
  return frame;
}

/// Horizontal heading of a camera pose: the optical axis projected onto the
/// world XY plane.
inline double heading_of(const Pose& pose) {
  Vec3 f = pose.rotation.col(2);
  if (std::hypot(f.x(), f.y()) < 1e-9) f = pose.rotation.col(0);
  return std::atan2(f.y(), f.x());
}

/// Planar 360° range scan in the horizontal plane through the sensor.
/// Bearings start at the pose heading; output is world frame with z equal to
/// the sensor height.
inline PointCloud render_2d_scan(const SceneSpec& scene, const Pose& pose, double angular_res,
                                 double max_range, const NoiseSpec& noise, std::uint64_t scan_id = 0) {
  if (!(angular_res > 0)) throw Error(ErrorCode::InvalidArgument, "angular_res must be > 0");
  noise.validate();
  PointCloud cloud;
  if (scene.boxes.empty()) return cloud;
  auto rng = detail::make_rng(noise.seed, scan_id, detail::Stream::Scan);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto beams = static_cast<std::size_t>(std::ceil(2.0 * std::numbers::pi / angular_res - 1e-12));
  const double heading = heading_of(pose);
  const Vec3 origin = pose.translation;
  for (std::size_t i = 0; i < beams; ++i) {
    const double a = heading + static_cast<double>(i) * angular_res;
    const Vec3 dir(std::cos(a), std::sin(a), 0.0);
    const RayHit hit = cast(scene, origin, dir);
    if (hit.box < 0 || hit.t > max_range) continue;
    double r = hit.t;
    if (noise.depth_rel_sigma > 0) r *= 1.0 + noise.depth_rel_sigma * gauss(rng);
    const std::uint16_t mm = detail::quantize_mm(r);
    if (mm == 0) continue;
    const double rq = mm / 1000.0;
    cloud.points.emplace_back(origin.x() + rq * dir.x(), origin.y() + rq * dir.y(), origin.z());
  }
  return cloud;
}

struct FrustumLimits {
  double near = 0.1;
  double outlier_min_depth = 0.5;
  double outlier_max_depth = 6.0;
};

/// Landmarks that are in the frustum and unoccluded, with isotropic Gaussian
/// position noise (sigma = depth_rel_sigma * range). A Bernoulli(outlier_fraction)
/// subset is replaced by uniform random frustum points.
inline std::vector<LandmarkObservation> observe_landmarks(const SceneSpec& scene, const Pose& pose,
                                                          const CameraIntrinsics& k, const NoiseSpec& noise,
                                                          std::uint64_t frame_id = 0,
                                                          const FrustumLimits& limits = {}) {
  noise.validate();
  std::vector<LandmarkObservation> out;
  auto rng = detail::make_rng(noise.seed, frame_id, detail::Stream::Landmarks);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Pose world_to_cam = pose.inverse();
  constexpr double kOcclusionTolerance = 1e-3;

  for (const auto& lm : scene.landmarks) {
    const Vec3 pc = world_to_cam * lm.position;
    if (pc.z() <= limits.near) continue;
    const Pixel px = project(k, pc);
    if (!k.contains(px.u, px.v)) continue;

    const Vec3 ray = lm.position - pose.translation;
    const double range = ray.norm();
    const RayHit hit = cast(scene, pose.translation, ray / range);
    if (hit.box >= 0 && hit.t < range - kOcclusionTolerance) continue;

    // Draw every variate unconditionally so the stream layout is independent
    // of the outcome.
    const Vec3 jitter(gauss(rng), gauss(rng), gauss(rng));
    const double coin = unit(rng);
    const double ru = unit(rng), rv = unit(rng), rz = unit(rng);

    LandmarkObservation obs;
    obs.landmark_id = lm.id;
    if (coin < noise.outlier_fraction) {
      const double z = limits.outlier_min_depth + rz * (limits.outlier_max_depth - limits.outlier_min_depth);
      obs.camera_point = backproject(k, ru * (k.width - 1), rv * (k.height - 1), z);
      obs.is_outlier = true;
    } else {
      obs.camera_point = pc + noise.depth_rel_sigma * range * jitter;
      if (obs.camera_point.z() <= 0) continue;
      const Pixel q = project(k, obs.camera_point);
      if (!k.contains(q.u, q.v)) continue;
    }
    out.push_back(obs);
  }
  return out;
}

/// Frame pairs whose true poses revisit the same place: temporally at least
/// `min_gap` frames apart, within `max_distance` metres and `max_angle` radians.
/// Only the earliest partner of each later frame is kept.
inline std::vector<std::pair<std::uint64_t, std::uint64_t>> declare_loop_closures(
    const std::vector<TrajectorySample>& samples, std::size_t min_gap = 10, double max_distance = 0.5,
    double max_angle = 0.5) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs;
  for (std::size_t j = 0; j < samples.size(); ++j) {
    for (std::size_t i = 0; i + min_gap < j; ++i) {
      const auto& a = samples[i].truth;
      const auto& b = samples[j].truth;
      if ((a.translation - b.translation).norm() <= max_distance &&
          rotation_angle_between(a.rotation, b.rotation) <= max_angle) {
        pairs.emplace_back(samples[i].frame_id, samples[j].frame_id);
        break;
      }
    }
  }
  return pairs;
}

}  // namespace twinfuse::sim
