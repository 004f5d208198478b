#pragma once

// The reference room test environment and its scripted scans.
//
// Interior: x in [0, 9.140] (room width), y in [0, 6], z in [0, 3], walls
// 0.2 m thick. A 0.690 m wide, 2.130 m tall shelf stands against the back
// wall; a 0.950 m tall door is recessed into the front wall.

#include <numbers>
#include <vector>

#include "twinfuse/eval/measure.hpp"
#include "twinfuse/sim/scan_sim.hpp"
#include "twinfuse/sim/scene.hpp"
#include "twinfuse/sim/dataset.hpp"

namespace twinfuse::fixtures {

inline constexpr double kRoomWidth = 9.140;
inline constexpr double kRoomLength = 6.0;
inline constexpr double kRoomHeight = 3.0;
inline constexpr double kWall = 0.2;
inline constexpr double kShelfWidth = 0.690;
inline constexpr double kShelfHeight = 2.130;
inline constexpr double kShelfDepth = 0.4;
inline constexpr double kShelfX0 = 2.0;
inline constexpr double kDoorHeight = 0.950;
inline constexpr double kDoorX0 = 6.0;
inline constexpr double kDoorX1 = 6.9;
inline constexpr double kDoorRecess = 0.15;

inline sim::SceneSpec reference_room() {
  using sim::Box;
  const double w = kRoomWidth, l = kRoomLength, h = kRoomHeight, t = kWall;
  sim::SceneSpec s;
  s.boxes = {
      Box{{-t, -t, -t}, {w + t, l + t, 0.0}, "floor"},
      Box{{-t, -t, h}, {w + t, l + t, h + t}, "ceiling"},
      Box{{-t, -t, 0.0}, {0.0, l + t, h}, "wall_left"},
      Box{{w, -t, 0.0}, {w + t, l + t, h}, "wall_right"},
      Box{{0.0, l, 0.0}, {w, l + t, h}, "wall_back"},
      Box{{0.0, -t, 0.0}, {kDoorX0, 0.0, h}, "wall_front_a"},
      Box{{kDoorX1, -t, 0.0}, {w, 0.0, h}, "wall_front_b"},
      Box{{kDoorX0, -t, kDoorHeight}, {kDoorX1, 0.0, h}, "lintel"},
      Box{{kDoorX0, -t, 0.0}, {kDoorX1, -kDoorRecess, kDoorHeight}, "door"},
      Box{{kShelfX0, l - kShelfDepth, 0.0}, {kShelfX0 + kShelfWidth, l, kShelfHeight}, "shelf"},
  };

  int id = 0;
  auto add = [&](double x, double y, double z) { s.landmarks.push_back({id++, Vec3(x, y, z)}); };
  constexpr double step = 0.25;
  for (double z = step / 2; z < h; z += step) {
    for (double y = step / 2; y < l; y += step) {
      add(0.0, y, z);
      add(w, y, z);
    }
    for (double x = step / 2; x < w; x += step) {
      add(x, l, z);
      if (!(x > kDoorX0 - 0.05 && x < kDoorX1 + 0.05 && z < kDoorHeight + 0.05)) add(x, 0.0, z);
    }
  }
  for (double x = 0.25; x < w; x += 0.5)
    for (double y = 0.25; y < l; y += 0.5) {
      add(x, y, 0.0);
      add(x, y, h);
    }
  for (double z = 0.15; z < kShelfHeight; z += 0.15)
    for (double x = kShelfX0 + 0.05; x < kShelfX0 + kShelfWidth; x += 0.1) add(x, l - kShelfDepth, z);

  s.defects = {
      {"crack", Vec3(0.0, 3.0, 1.2)},
      {"crack", Vec3(5.0, l, 1.6)},
      {"spalling", Vec3(kShelfX0 + kShelfWidth / 2, l - kShelfDepth, 1.0)},
  };
  return s;
}

/// Stereo-camera sweep: left wall, shelf (low/high/right side), right wall,
/// front wall, and back to the start for a loop closure.
inline sim::TrajectorySpec stereo_sweep(double frame_rate = 5.0, sim::MotionNoise noise = {0.00175, 0.005}) {
  constexpr double pi = std::numbers::pi;
  sim::TrajectorySpec t;
  t.frame_rate = frame_rate;
  t.motion_noise = noise;
  t.waypoints = {
      look_pose({1.5, 1.5, 1.5}, pi),
      look_pose({1.5, 3.0, 1.5}, pi),
      look_pose({1.5, 4.0, 1.5}, pi),
      look_pose({1.6, 3.6, 1.6}, pi / 2, -0.35),
      look_pose({2.35, 3.6, 2.7}, pi / 2, -0.30),
      look_pose({3.1, 3.6, 1.6}, pi / 2, -0.35),
      look_pose({6.0, 4.0, 1.5}, pi / 2),
      look_pose({7.64, 4.0, 1.5}, 0.0),
      look_pose({7.64, 2.0, 1.5}, 0.0),
      look_pose({6.45, 1.8, 1.2}, -pi / 2),
      look_pose({4.5, 1.5, 1.5}, -pi / 2),
      look_pose({1.5, 1.5, 1.5}, pi),
  };
  return t;
}

/// Planar-scanner flight: vertical sweeps in the middle of the room, in front
/// of the door and in front of the shelf.
inline sim::TrajectorySpec lidar_sweep(double scan_rate = 10.0, sim::MotionNoise noise = {0.00175, 0.005}) {
  constexpr double pi = std::numbers::pi;
  sim::TrajectorySpec t;
  t.frame_rate = scan_rate;
  t.motion_noise = noise;
  t.segment_duration = 2.0;
  t.waypoints = {
      look_pose({4.57, 3.0, 0.5}, pi / 2),
      look_pose({4.57, 3.0, 2.5}, pi / 2),
      look_pose({6.45, 1.6, 1.5}, -pi / 2),
      look_pose({6.45, 1.6, 0.02}, -pi / 2),
      look_pose({6.45, 1.6, 1.4}, -pi / 2),
      look_pose({2.35, 4.4, 1.2}, pi / 2),
      look_pose({2.35, 4.4, 0.3}, pi / 2),
      look_pose({4.57, 3.0, 0.5}, pi / 2),
  };
  return t;
}

/// Short inspection pass over five viewpoints: the left-wall crack, the
/// shelf front (twice) and the back-wall crack.
inline sim::TrajectorySpec defect_survey(double frame_rate = 4.0, sim::MotionNoise noise = {0.00175, 0.005}) {
  constexpr double pi = std::numbers::pi;
  sim::TrajectorySpec t;
  t.frame_rate = frame_rate;
  t.motion_noise = noise;
  t.waypoints = {
      look_pose({1.4, 3.0, 1.3}, pi),
      look_pose({1.7, 3.9, 1.2}, 0.55 * pi),
      look_pose({2.35, 4.3, 1.1}, pi / 2),
      look_pose({4.0, 4.2, 1.5}, pi / 2),
      look_pose({5.0, 4.0, 1.6}, pi / 2),
  };
  return t;
}

/// Regions of interest for the measurement rows. Each roi holds only the two
/// bounding surfaces of the measured dimension (plus surfaces between them
/// that do not reach past either end).
inline eval::MeasurementSpec room_width() {
  return {"Room Width", eval::Axis::X, Aabb{{-0.1, 1.0, 0.5}, {kRoomWidth + 0.1, 4.5, 2.5}}, kRoomWidth};
}

inline eval::MeasurementSpec shelf_width() {
  const double y0 = kRoomLength - kShelfDepth;
  return {"Shelf Width", eval::Axis::X,
          Aabb{{kShelfX0 - 0.05, y0 - 0.05, 0.3}, {kShelfX0 + kShelfWidth + 0.05, kRoomLength - 0.02, 1.8}},
          kShelfWidth};
}

inline eval::MeasurementSpec shelf_height() {
  const double y0 = kRoomLength - kShelfDepth;
  return {"Shelf Height", eval::Axis::Z,
          Aabb{{kShelfX0 + 0.05, y0 - 0.3, -0.05}, {kShelfX0 + kShelfWidth - 0.05, kRoomLength - 0.05, kShelfHeight + 0.1}},
          kShelfHeight};
}

inline eval::MeasurementSpec door_height() {
  return {"Door Height", eval::Axis::Z,
          Aabb{{kDoorX0 + 0.05, -kDoorRecess - 0.02, -0.05}, {kDoorX1 - 0.05, -kDoorRecess + 0.07, kRoomHeight - 0.1}},
          kDoorHeight};
}

inline std::vector<eval::MeasurementSpec> stereo_measurements() { return {room_width(), shelf_width(), shelf_height()}; }
inline std::vector<eval::MeasurementSpec> lidar_measurements() { return {room_width(), shelf_width(), door_height()}; }

/// Reconstruction settings for measurement runs. A fine 1 cm grid evens out
/// the viewing-distance density falloff without thinning noisy surfaces much.
inline slam::PipelineConfig measurement_pipeline_config() {
  slam::PipelineConfig c;
  c.voxel = 0.01;
  c.cloud_stride = 4;
  c.max_map_depth = 4.0;
  return c;
}

/// Simulation settings for the stereo-camera measurement scan.
inline sim::SimulateOptions stereo_scan_options(std::uint64_t seed, bool noisy) {
  sim::SimulateOptions o;
  o.seed = seed;
  o.detections = false;
  if (noisy) {
    o.depth_sigma = 0.01;
    o.landmark_sigma = 0.001;
    o.outlier_fraction = 0.3;
  }
  return o;
}

/// Simulation settings for the planar-scanner measurement scan.
inline sim::SimulateOptions lidar_scan_options(std::uint64_t seed, bool noisy) {
  sim::SimulateOptions o = stereo_scan_options(seed, noisy);
  o.depth_frames = false;
  o.planar_scans = true;
  if (noisy) o.depth_sigma = 0.002;
  return o;
}

}  // namespace twinfuse::fixtures
