#pragma once

// Dimensional measurements on reconstructed clouds and the error-table
// arithmetic (Measured Distance / Distance / Error / % Error).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "twinfuse/geometry.hpp"

namespace twinfuse::eval {

enum class Axis { X = 0, Y = 1, Z = 2 };

struct MeasurementSpec {
  std::string name;
  Axis axis = Axis::X;
  Aabb roi;
  double truth = 0.0;  // metres

  void validate() const {
    if (!roi.valid()) throw Error(ErrorCode::InvalidRegion, name + ": roi min > max");
    if (!(truth > 0)) throw Error(ErrorCode::InvalidArgument, name + ": truth must be > 0");
  }
};

inline constexpr std::size_t kMinPointsInRoi = 100;

/// Linear-interpolated percentile of already-sorted values, q in [0, 100].
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw Error(ErrorCode::InsufficientPoints, "percentile of empty set");
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return sorted[lo] + f * (sorted[hi] - sorted[lo]);
}

/// Robust extent along spec.axis: p99 - p1 over the points inside the roi.
inline double measure_extent(const PointCloud& cloud, const MeasurementSpec& spec) {
  spec.validate();
  const int a = static_cast<int>(spec.axis);
  std::vector<double> values;
  for (const Vec3& p : cloud.points) {
    if (spec.roi.contains(p)) values.push_back(p[a]);
  }
  if (values.size() < kMinPointsInRoi) {
    throw Error(ErrorCode::InsufficientPoints,
                spec.name + ": " + std::to_string(values.size()) + " points in roi");
  }
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, 99.0) - percentile_sorted(values, 1.0);
}

struct ErrorRow {
  std::string name;
  double truth_mm = 0.0;
  double estimate_mm = 0.0;
  double error_mm = 0.0;
  double percent_error = 0.0;

  friend bool operator==(const ErrorRow&, const ErrorRow&) = default;
};

/// Round half to even at `decimals` places.
inline double round_half_even(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const double scaled = value * scale;
  double r = std::round(scaled);
  if (std::abs(scaled - std::trunc(scaled)) == 0.5) r = 2.0 * std::round(scaled / 2.0);
  return r / scale;
}

/// Distances are reported in whole millimetres and percentages to two
/// decimals, the way the measurement tables print them.
inline ErrorRow error_row(std::string name, double truth_mm, double estimate_mm) {
  if (!(truth_mm > 0)) throw Error(ErrorCode::InvalidArgument, "truth must be > 0");
  ErrorRow row;
  row.name = std::move(name);
  row.truth_mm = round_half_even(truth_mm, 0);
  row.estimate_mm = round_half_even(estimate_mm, 0);
  row.error_mm = std::abs(row.estimate_mm - row.truth_mm);
  row.percent_error = round_half_even(100.0 * row.error_mm / row.truth_mm, 2);
  return row;
}

inline ErrorRow measure_row(const PointCloud& cloud, const MeasurementSpec& spec) {
  return error_row(spec.name, spec.truth * 1000.0, measure_extent(cloud, spec) * 1000.0);
}

}  // namespace twinfuse::eval
