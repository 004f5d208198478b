#pragma once

// SE(3) exponential/logarithm and Jacobians.
// Twists are ordered (rho, phi): translational part first, rotational part second.
// Perturbations are left-multiplicative: T <- exp(xi) * T.

#include <Eigen/Core>
#include <Eigen/LU>

#include <cmath>

#include "twinfuse/geometry.hpp"

namespace twinfuse::se3 {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline constexpr double kSmallAngle = 1e-8;

inline Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

namespace detail {

// (1 - cos t) / t^2 without cancellation.
inline double one_minus_cos_over_t2(double t) {
  const double h = std::sin(0.5 * t) / (0.5 * t);
  return 0.5 * h * h;
}

// (t - sin t) / t^3, series below 1e-2 where the difference cancels.
inline double t_minus_sin_over_t3(double t) {
  const double t2 = t * t;
  if (t < 1e-2) return 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
  return (t - std::sin(t)) / (t2 * t);
}

}  // namespace detail

inline Mat3 so3_exp(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = hat(phi);
  if (theta < kSmallAngle) return Mat3::Identity() + k + 0.5 * k * k;
  return Mat3::Identity() + std::sin(theta) / theta * k + detail::one_minus_cos_over_t2(theta) * k * k;
}

inline Vec3 so3_log(const Mat3& r) {
  const Vec3 skew(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = 0.5 * skew.norm();
  const double theta = std::atan2(s, 0.5 * (r.trace() - 1.0));
  if (theta < kSmallAngle) return 0.5 * skew;
  if (std::numbers::pi - theta < 1e-3) {
    // Near pi the skew part vanishes; recover the axis from the symmetric part.
    const Eigen::AngleAxisd aa(Eigen::Quaterniond(r).normalized());
    return aa.angle() * aa.axis();
  }
  return theta / (2.0 * s) * skew;
}

/// Left Jacobian of SO(3).
inline Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = hat(phi);
  if (theta < kSmallAngle) return Mat3::Identity() + 0.5 * k + k * k / 6.0;
  return Mat3::Identity() + detail::one_minus_cos_over_t2(theta) * k + detail::t_minus_sin_over_t3(theta) * k * k;
}

inline Pose exp(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  return Pose{so3_exp(phi), so3_left_jacobian(phi) * rho};
}

inline Vec6 log(const Pose& t) {
  const Vec3 phi = so3_log(t.rotation);
  const Vec3 rho = so3_left_jacobian(phi).inverse() * t.translation;
  Vec6 xi;
  xi << rho, phi;
  return xi;
}

/// Adjoint of T in (rho, phi) ordering: exp(Ad_T xi) = T exp(xi) T^-1.
inline Mat6 adjoint(const Pose& t) {
  Mat6 a = Mat6::Zero();
  a.block<3, 3>(0, 0) = t.rotation;
  a.block<3, 3>(0, 3) = hat(t.translation) * t.rotation;
  a.block<3, 3>(3, 3) = t.rotation;
  return a;
}

/// The Q block coupling translation and rotation in the SE(3) left Jacobian.
inline Mat3 left_jacobian_q(const Vec3& rho, const Vec3& phi) {
  const Mat3 rx = hat(rho);
  const Mat3 px = hat(phi);
  const double theta = phi.norm();
  double c1, c2, c3;
  if (theta < 1e-2) {
    // Series expansions of the coefficients below.
    const double t2 = theta * theta;
    const double t4 = t2 * t2;
    c1 = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0;
    c2 = 1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0;
    c3 = 1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0;
  } else {
    const double t2 = theta * theta;
    const double t3 = t2 * theta;
    const double t4 = t3 * theta;
    const double t5 = t4 * theta;
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    c1 = (theta - s) / t3;
    c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t4);
    c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t5);
  }
  return 0.5 * rx + c1 * (px * rx + rx * px + px * rx * px) +
         c2 * (px * px * rx + rx * px * px - 3.0 * px * rx * px) +
         c3 * (px * rx * px * px + px * px * rx * px);
}

inline Mat6 left_jacobian(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  const Mat3 j = so3_left_jacobian(phi);
  Mat6 out = Mat6::Zero();
  out.block<3, 3>(0, 0) = j;
  out.block<3, 3>(0, 3) = left_jacobian_q(rho, phi);
  out.block<3, 3>(3, 3) = j;
  return out;
}

inline Mat6 left_jacobian_inverse(const Vec6& xi) { return left_jacobian(xi).inverse(); }

}  // namespace twinfuse::se3
