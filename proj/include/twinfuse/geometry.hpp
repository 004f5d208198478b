#pragma once

// Camera and rigid-body geometry.
//
// Conventions used everywhere in twinfuse:
//   camera frame: right-handed, +Z along the optical axis, +X right, +Y down.
//   world frame:  right-handed, +Z up.
//   A Pose maps camera coordinates to world coordinates.
//   Depth is the camera-frame Z coordinate stored as u16 millimetres, 0 = invalid.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "twinfuse/error.hpp"

namespace twinfuse {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

/// Rigid SE(3) transform, camera-to-world.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  static Pose from(const Mat3& r, const Vec3& t) { return Pose{r, t}; }

  /// Rotation about world Z by `radians`, then translation.
  static Pose rz(double radians, const Vec3& t = Vec3::Zero()) {
    return Pose{Eigen::AngleAxisd(radians, Vec3::UnitZ()).toRotationMatrix(), t};
  }

  Pose inverse() const {
    Mat3 rt = rotation.transpose();
    return Pose{rt, -rt * translation};
  }

  Vec3 operator*(const Vec3& x) const { return rotation * x + translation; }
};

/// Largest absolute deviation of R·Rᵀ from I and of det(R) from 1.
inline double orthonormality_error(const Mat3& r) {
  double e = (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::max(e, std::abs(r.determinant() - 1.0));
}

/// Nearest rotation in the Frobenius sense (polar decomposition via SVD).
inline Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  Mat3 r = u * v.transpose();
  if (r.determinant() < 0.0) {
    u.col(2) *= -1.0;
    r = u * v.transpose();
  }
  return r;
}

inline constexpr double kOrthonormalTolerance = 1e-9;

inline bool is_valid(const Pose& p) {
  return p.rotation.allFinite() && p.translation.allFinite() &&
         orthonormality_error(p.rotation) <= kOrthonormalTolerance;
}

/// a∘b: apply b first, then a.
inline Pose compose(const Pose& a, const Pose& b) {
  Pose out{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
  if (orthonormality_error(out.rotation) > kOrthonormalTolerance) {
    out.rotation = nearest_rotation(out.rotation);
  }
  return out;
}

inline Vec3 apply(const Pose& p, const Vec3& x) { return p.rotation * x + p.translation; }

/// Rotation angle (radians) between two rotations.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  double c = ((a.transpose() * b).trace() - 1.0) * 0.5;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

/// Camera placed at `position`, optical axis horizontal at heading `yaw`
/// (radians from world +X toward +Y), image-down = world -Z.
inline Pose look_pose(const Vec3& position, double yaw, double pitch = 0.0) {
  Vec3 forward(std::cos(yaw) * std::cos(pitch), std::sin(yaw) * std::cos(pitch),
               std::sin(pitch));
  Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
  Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return Pose{r, position};
}

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Pinhole intrinsics from horizontal/vertical field of view (degrees),
  /// principal point at the image centre.
  static CameraIntrinsics from_fov(int width, int height, double hfov_deg, double vfov_deg) {
    constexpr double deg = std::numbers::pi / 180.0;
    CameraIntrinsics k;
    k.width = width;
    k.height = height;
    k.fx = (width / 2.0) / std::tan(hfov_deg * deg / 2.0);
    k.fy = (height / 2.0) / std::tan(vfov_deg * deg / 2.0);
    k.cx = width / 2.0;
    k.cy = height / 2.0;
    return k;
  }

  /// 640x480 sensor with an 87° x 58° field of view.
  static CameraIntrinsics default_depth_camera() { return from_fov(640, 480, 87.0, 58.0); }

  bool valid() const {
    return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 && cx < width && cy >= 0 &&
           cy < height;
  }

  bool contains(double u, double v) const { return u >= 0 && v >= 0 && u < width && v < height; }
};

struct StereoRig {
  double baseline = 0.0;  // metres
  double focal = 0.0;     // pixels
};

struct DepthFrame {
  std::uint64_t frame_id = 0;
  double timestamp = 0.0;
  std::uint32_t intrinsics_id = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> depths;  // row-major, millimetres, 0 = invalid
  std::optional<Pose> pose_hint;

  std::uint16_t at(int u, int v) const {
    return depths[static_cast<std::size_t>(v) * width + u];
  }
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct PointCloud {
  std::vector<Vec3> points;
  std::optional<std::vector<Rgb>> colors;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  void append(const PointCloud& other) {
    points.insert(points.end(), other.points.begin(), other.points.end());
    if (colors && other.colors) colors->insert(colors->end(), other.colors->begin(), other.colors->end());
    else colors.reset();
  }
};

inline Vec3 backproject(const CameraIntrinsics& k, double u, double v, double z) {
  if (!(z > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "depth must be > 0");
  if (!k.contains(u, v)) throw Error(ErrorCode::OutOfBounds, "pixel outside image");
  return Vec3((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
}

/// Forward pinhole projection. No bounds clamp; callers check.
inline Pixel project(const CameraIntrinsics& k, const Vec3& x) {
  if (!(x.z() > 0.0)) throw Error(ErrorCode::BehindCamera, "point behind camera");
  return Pixel{k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy};
}

inline double disparity_to_depth(const StereoRig& rig, double disparity) {
  if (!(disparity > 0.0)) throw Error(ErrorCode::ZeroDisparity, "disparity must be > 0");
  return rig.focal * rig.baseline / disparity;
}

inline double depth_to_disparity(const StereoRig& rig, double depth) {
  if (!(depth > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "depth must be > 0");
  return rig.focal * rig.baseline / depth;
}

/// One world-frame point per valid pixel on the stride grid.
/// `max_depth_m` > 0 additionally drops pixels farther than that.
inline PointCloud depth_to_cloud(const DepthFrame& frame, const CameraIntrinsics& k,
                                 const Pose& pose, int stride = 1, double max_depth_m = 0.0) {
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  if (frame.width != k.width || frame.height != k.height ||
      frame.depths.size() != static_cast<std::size_t>(k.width) * k.height) {
    throw Error(ErrorCode::ResolutionMismatch, "frame does not match intrinsics");
  }
  PointCloud cloud;
  const std::uint16_t cap =
      max_depth_m > 0 ? static_cast<std::uint16_t>(std::min(65535.0, max_depth_m * 1000.0)) : 65535;
  for (int v = 0; v < k.height; v += stride) {
    for (int u = 0; u < k.width; u += stride) {
      std::uint16_t d = frame.at(u, v);
      if (d == 0 || d > cap) continue;
      double z = d / 1000.0;
      Vec3 c((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
      cloud.points.push_back(pose * c);
    }
  }
  return cloud;
}

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool valid() const { return (min.array() <= max.array()).all(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  bool overlaps(const Aabb& o) const {
    return (min.array() <= o.max.array()).all() && (o.min.array() <= max.array()).all();
  }
};

}  // namespace twinfuse
