#pragma once

// Closed-form weighted rigid alignment (SVD of the cross-covariance with a
// reflection sign fix) and RANSAC registration on top of it.

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <limits>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "twinfuse/geometry.hpp"

namespace twinfuse::slam {

struct Correspondence {
  Vec3 source;
  Vec3 target;
};

/// Pose T minimising sum_i w_i |T * source_i - target_i|^2.
inline Pose estimate_rigid(std::span<const Correspondence> c, std::span<const double> weights = {}) {
  if (c.size() < 3) throw Error(ErrorCode::DegenerateConfiguration, "need at least 3 correspondences");
  if (!weights.empty() && weights.size() != c.size())
    throw Error(ErrorCode::InvalidArgument, "weights size mismatch");
  auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  double wsum = 0.0;
  Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!c[i].source.allFinite() || !c[i].target.allFinite())
      throw Error(ErrorCode::InvalidArgument, "non-finite correspondence");
    wsum += w(i);
    mu_s += w(i) * c[i].source;
    mu_t += w(i) * c[i].target;
  }
  if (!(wsum > 0)) throw Error(ErrorCode::DegenerateConfiguration, "weights sum to zero");
  mu_s /= wsum;
  mu_t /= wsum;

  Mat3 cov_s = Mat3::Zero();
  Mat3 cross = Mat3::Zero();  // sum w (t - mu_t)(s - mu_s)^T
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Vec3 ds = c[i].source - mu_s;
    const Vec3 dt = c[i].target - mu_t;
    cov_s += w(i) * ds * ds.transpose();
    cross += w(i) * dt * ds.transpose();
  }

  // Collinear or coincident sources leave rotation about the line undetermined.
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov_s / wsum);
  const Vec3 ev = eig.eigenvalues();  // ascending
  const double scale = std::max(ev[2], 1e-300);
  if (ev[2] < 1e-18 || ev[1] < 1e-10 * scale) {
    throw Error(ErrorCode::DegenerateConfiguration, "source points are collinear or coincident");
  }

  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((u * v.transpose()).determinant() < 0) d(2, 2) = -1.0;
  Pose out;
  out.rotation = u * d * v.transpose();
  out.translation = mu_t - out.rotation * mu_s;
  return out;
}

struct RansacConfig {
  double inlier_threshold = 0.010;
  double confidence = 0.99;
  int max_iterations = 500;
  int min_inliers = 10;

  void validate() const {
    if (!(inlier_threshold > 0)) throw Error(ErrorCode::InvalidArgument, "inlier_threshold must be > 0");
    if (!(confidence > 0 && confidence < 1)) throw Error(ErrorCode::InvalidArgument, "confidence outside (0,1)");
    if (max_iterations < 1 || min_inliers < 1) throw Error(ErrorCode::InvalidArgument, "counts must be positive");
  }
};

struct RansacResult {
  Pose pose;
  std::vector<bool> inlier_mask;
  int iterations_used = 0;
  std::size_t inlier_count() const {
    return static_cast<std::size_t>(std::count(inlier_mask.begin(), inlier_mask.end(), true));
  }
};

namespace detail {

inline std::vector<bool> inliers_of(const Pose& t, std::span<const Correspondence> c, double threshold,
                                    std::size_t& count) {
  std::vector<bool> mask(c.size(), false);
  count = 0;
  const double t2 = threshold * threshold;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if ((t * c[i].source - c[i].target).squaredNorm() < t2) {
      mask[i] = true;
      ++count;
    }
  }
  return mask;
}

/// Iterations needed so that an all-inlier minimal sample has been drawn with
/// probability `confidence`, given inlier ratio w.
inline double required_iterations(double w, double confidence) {
  const double p = w * w * w;
  if (p >= 1.0) return 1.0;
  if (p <= 0.0) return std::numeric_limits<double>::infinity();
  return std::log(1.0 - confidence) / std::log(1.0 - p);
}

}  // namespace detail

/// RANSAC over minimal 3-point samples with adaptive termination and a final
/// refit on all inliers. Deterministic given `seed`.
inline RansacResult ransac_register(std::span<const Correspondence> c, const RansacConfig& cfg,
                                    std::uint64_t seed) {
  cfg.validate();
  if (c.size() < static_cast<std::size_t>(std::max(cfg.min_inliers, 3)))
    throw Error(ErrorCode::NoConsensus, "fewer correspondences than min_inliers");

  std::mt19937_64 rng(seed);
  const auto n = static_cast<std::uint64_t>(c.size());
  auto draw = [&](std::uint64_t bound) {
    // Rejection sampling keeps the draw independent of the standard library's
    // distribution implementation.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do x = rng();
    while (x >= limit);
    return x % bound;
  };

  std::size_t best_count = 0;
  std::vector<bool> best_mask;
  Pose best_pose;
  int iter = 0;
  double needed = static_cast<double>(cfg.max_iterations);
  std::array<Correspondence, 3> sample;
  while (iter < cfg.max_iterations && static_cast<double>(iter) < needed) {
    ++iter;
    std::uint64_t a = draw(n), b = draw(n - 1), d = draw(n - 2);
    if (b >= a) ++b;
    const std::uint64_t lo = std::min(a, b), hi = std::max(a, b);
    if (d >= lo) ++d;
    if (d >= hi) ++d;
    sample = {c[a], c[b], c[d]};
    Pose model;
    try {
      model = estimate_rigid(sample);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DegenerateConfiguration) continue;
      throw;
    }
    std::size_t count = 0;
    auto mask = detail::inliers_of(model, c, cfg.inlier_threshold, count);
    if (count > best_count) {
      best_count = count;
      best_mask = std::move(mask);
      best_pose = model;
      needed = detail::required_iterations(static_cast<double>(count) / static_cast<double>(n), cfg.confidence);
    }
  }
  if (best_count < static_cast<std::size_t>(cfg.min_inliers) || best_count < 3)
    throw Error(ErrorCode::NoConsensus, "best consensus " + std::to_string(best_count) + " < min_inliers");

  std::vector<Correspondence> inl;
  inl.reserve(best_count);
  for (std::size_t i = 0; i < c.size(); ++i)
    if (best_mask[i]) inl.push_back(c[i]);

  RansacResult result;
  result.iterations_used = iter;
  try {
    result.pose = estimate_rigid(inl);
  } catch (const Error&) {
    result.pose = best_pose;
  }
  std::size_t refit_count = 0;
  auto refit_mask = detail::inliers_of(result.pose, c, cfg.inlier_threshold, refit_count);
  if (refit_count >= best_count) {
    result.inlier_mask = std::move(refit_mask);
  } else {
    result.pose = best_pose;
    result.inlier_mask = std::move(best_mask);
  }
  return result;
}

}  // namespace twinfuse::slam
