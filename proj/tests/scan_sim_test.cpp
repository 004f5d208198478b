#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "twinfuse/fixtures.hpp"
#include "twinfuse/sim/io.hpp"
#include "twinfuse/sim/scan_sim.hpp"
#include "test_util.hpp"

using namespace twinfuse;
using namespace twinfuse::sim;

namespace {

constexpr double kPi = std::numbers::pi;

// Wall whose near face is the plane x = 3, spanning well past the frustum.
SceneSpec wall_at_3m() {
  SceneSpec s;
  s.boxes.push_back(Box{{3.0, -20.0, -20.0}, {3.2, 20.0, 20.0}, "wall"});
  return s;
}

// Camera at the origin looking down +X, level.
Pose facing_wall() { return look_pose(Vec3::Zero(), 0.0); }

double stddev(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

TrajectorySpec square_loop(double trans_sigma) {
  TrajectorySpec t;
  t.frame_rate = 10.0;
  t.motion_noise = {0.0, trans_sigma};
  t.waypoints = {look_pose({0, 0, 1}, 0), look_pose({2, 0, 1}, 0), look_pose({2, 2, 1}, 0),
                 look_pose({0, 2, 1}, 0), look_pose({0, 0, 1}, 0)};
  return t;
}

}  // namespace

TEST(RenderDepthFrame, WallAtThreeMetresReadsThreeThousandMillimetres) {
  const auto k = CameraIntrinsics::default_depth_camera();
  const auto f = render_depth_frame(wall_at_3m(), facing_wall(), k, NoiseSpec{});
  EXPECT_EQ(f.at(320, 240), 3000);
  // A fronto-parallel plane has constant camera-Z everywhere.
  for (auto d : f.depths) ASSERT_EQ(d, 3000);
}

TEST(RenderDepthFrame, FacingAwayGivesAllZeroFrame) {
  const auto k = CameraIntrinsics::default_depth_camera();
  const auto f = render_depth_frame(wall_at_3m(), look_pose(Vec3::Zero(), kPi), k, NoiseSpec{});
  EXPECT_TRUE(std::all_of(f.depths.begin(), f.depths.end(), [](auto d) { return d == 0; }));
  const auto empty = render_depth_frame(SceneSpec{}, facing_wall(), k, NoiseSpec{});
  EXPECT_TRUE(std::all_of(empty.depths.begin(), empty.depths.end(), [](auto d) { return d == 0; }));
}

TEST(RenderDepthFrame, OnePercentNoiseHasThirtyMillimetreSpread) {
  const auto k = CameraIntrinsics::default_depth_camera();
  NoiseSpec n;
  n.depth_rel_sigma = 0.01;
  n.seed = 42;
  const auto f = render_depth_frame(wall_at_3m(), facing_wall(), k, n);
  std::vector<double> centre;
  for (int v = 190; v < 290; ++v)
    for (int u = 270; u < 370; ++u) centre.push_back(f.at(u, v));
  ASSERT_GE(centre.size(), 10000u);
  const double s = stddev(centre);
  EXPECT_GE(s, 25.0);
  EXPECT_LE(s, 35.0);
}

TEST(RenderDepthFrame, InvalidNoiseRejected) {
  const auto k = CameraIntrinsics::default_depth_camera();
  NoiseSpec n;
  n.depth_rel_sigma = -0.1;
  EXPECT_CODE(render_depth_frame(wall_at_3m(), facing_wall(), k, n), ErrorCode::InvalidArgument);
  n = NoiseSpec{};
  n.outlier_fraction = 1.0;
  EXPECT_CODE(observe_landmarks(wall_at_3m(), facing_wall(), k, n), ErrorCode::InvalidArgument);
}

TEST(RenderDepthFrameProperty, ZeroNoiseCloudLiesOnSurfaces) {
  const auto scene = fixtures::reference_room();
  const auto k = CameraIntrinsics::from_fov(160, 120, 87, 58);
  const auto samples = simulate_trajectory(fixtures::stereo_sweep(), 0);
  for (std::size_t i = 0; i < samples.size(); i += 5) {
    const Pose& pose = samples[i].truth;
    const auto f = render_depth_frame(scene, pose, k, NoiseSpec{}, samples[i].frame_id);
    const auto cloud = depth_to_cloud(f, k, pose);
    ASSERT_FALSE(cloud.empty());
    for (const auto& p : cloud.points) {
      const Vec3 c = pose.inverse() * p;
      // 0.5 mm of camera-Z quantization, carried along the viewing ray.
      const double bound = 0.0005 * c.norm() / c.z() + 1e-9;
      ASSERT_LE(distance_to_surfaces(scene, p), bound) << "frame " << i;
    }
  }
}

TEST(RenderDepthFrameProperty, BitIdenticalForSameSeed) {
  const auto scene = fixtures::reference_room();
  const auto k = CameraIntrinsics::from_fov(64, 48, 87, 58);
  NoiseSpec n;
  n.depth_rel_sigma = 0.01;
  n.outlier_fraction = 0.3;
  n.seed = 99;
  const Pose p = look_pose({1.5, 1.5, 1.5}, kPi);
  EXPECT_EQ(render_depth_frame(scene, p, k, n, 7).depths, render_depth_frame(scene, p, k, n, 7).depths);
  EXPECT_NE(render_depth_frame(scene, p, k, n, 7).depths, render_depth_frame(scene, p, k, n, 8).depths);
  const auto a = observe_landmarks(scene, p, k, n, 7), b = observe_landmarks(scene, p, k, n, 7);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].landmark_id, b[i].landmark_id);
    EXPECT_EQ(a[i].camera_point, b[i].camera_point);
    EXPECT_EQ(a[i].is_outlier, b[i].is_outlier);
  }
  const auto sa = render_2d_scan(scene, p, 0.01, 30, n, 3), sb = render_2d_scan(scene, p, 0.01, 30, n, 3);
  EXPECT_EQ(sa.points, sb.points);
}

TEST(SimulateTrajectory, ZeroMotionNoiseOdometryEqualsTruth) {
  for (const auto& s : simulate_trajectory(square_loop(0.0), 5)) {
    EXPECT_EQ(s.odometry.rotation, s.truth.rotation);
    EXPECT_EQ(s.odometry.translation, s.truth.translation);
  }
}

TEST(SimulateTrajectory, MidpointOfElevenFrames) {
  TrajectorySpec t;
  t.waypoints = {Pose::identity(), Pose::from(Mat3::Identity(), Vec3(1, 0, 0))};
  t.frame_rate = 10.0;
  const auto s = simulate_trajectory(t, 0);
  ASSERT_EQ(s.size(), 11u);
  EXPECT_LE((s[5].truth.translation - Vec3(0.5, 0, 0)).norm(), 1e-9);
  EXPECT_DOUBLE_EQ(s[5].timestamp, 0.5);
  EXPECT_EQ(s[5].frame_id, 5u);
}

TEST(SimulateTrajectory, RotationFollowsSlerp) {
  TrajectorySpec t;
  t.waypoints = {look_pose(Vec3::Zero(), 0.0), look_pose(Vec3::Zero(), kPi / 2)};
  t.frame_rate = 4.0;
  const auto s = simulate_trajectory(t, 0);
  ASSERT_EQ(s.size(), 5u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_NEAR(heading_of(s[i].truth), kPi / 2 * static_cast<double>(i) / 4.0, 1e-12);
    EXPECT_TRUE(is_valid(s[i].truth));
  }
}

TEST(SimulateTrajectory, InvalidSpecRejected) {
  TrajectorySpec t;
  t.waypoints = {Pose::identity()};
  EXPECT_CODE(simulate_trajectory(t, 0), ErrorCode::InvalidArgument);
  t.waypoints.push_back(Pose::identity());
  t.frame_rate = 0;
  EXPECT_CODE(simulate_trajectory(t, 0), ErrorCode::InvalidArgument);
}

TEST(SimulateTrajectory, OdometryDriftGrowsWithSteps) {
  const auto spec = square_loop(0.005);
  const std::size_t n = simulate_trajectory(spec, 0).size();
  const std::size_t checkpoints[] = {n / 4, n / 2, n - 1};
  double mean_gap[3] = {0, 0, 0};
  int final_positive = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = simulate_trajectory(spec, seed);
    for (int c = 0; c < 3; ++c) {
      const auto& x = s[checkpoints[c]];
      mean_gap[c] += (x.odometry.translation - x.truth.translation).norm() / 100.0;
    }
    final_positive += (s.back().odometry.translation - s.back().truth.translation).norm() > 0;
  }
  EXPECT_EQ(final_positive, 100);
  EXPECT_GT(mean_gap[0], 0.0);
  EXPECT_GT(mean_gap[1], mean_gap[0]);
  EXPECT_GT(mean_gap[2], mean_gap[1]);
  // Random walk: gap grows like sqrt(steps), so the quarter-to-full ratio is ~2.
  EXPECT_GT(mean_gap[2] / mean_gap[0], 1.5);
}

TEST(SimulateTrajectory, OdometryIsSeedDeterministic) {
  const auto a = simulate_trajectory(square_loop(0.005), 11), b = simulate_trajectory(square_loop(0.005), 11);
  const auto c = simulate_trajectory(square_loop(0.005), 12);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].odometry.translation, b[i].odometry.translation);
  EXPECT_NE(a.back().odometry.translation, c.back().odometry.translation);
}

TEST(ObserveLandmarks, OnAxisLandmarkAtTwoMetres) {
  SceneSpec s;
  s.landmarks.push_back({7, Vec3(2, 0, 0)});
  const auto obs = observe_landmarks(s, facing_wall(), CameraIntrinsics::default_depth_camera(), NoiseSpec{});
  ASSERT_EQ(obs.size(), 1u);
  EXPECT_EQ(obs[0].landmark_id, 7);
  EXPECT_LE((obs[0].camera_point - Vec3(0, 0, 2)).norm(), 1e-12);
  EXPECT_FALSE(obs[0].is_outlier);
}

TEST(ObserveLandmarks, BehindCameraAndOccludedAreCulled) {
  SceneSpec s = wall_at_3m();
  s.landmarks.push_back({1, Vec3(-2, 0, 0)});   // behind
  s.landmarks.push_back({2, Vec3(4, 0, 0)});    // behind the wall
  s.landmarks.push_back({3, Vec3(3, 0.5, 0)});  // on the wall face
  s.landmarks.push_back({4, Vec3(1, 5, 0)});    // outside the horizontal FOV
  const auto obs = observe_landmarks(s, facing_wall(), CameraIntrinsics::default_depth_camera(), NoiseSpec{});
  ASSERT_EQ(obs.size(), 1u);
  EXPECT_EQ(obs[0].landmark_id, 3);
}

TEST(ObserveLandmarks, ThirtyPercentOutliersOverSeedEnsemble) {
  SceneSpec s = wall_at_3m();
  for (int i = 0; i < 100; ++i) s.landmarks.push_back({i, Vec3(3.0, -1.0 + 0.2 * (i % 10), -0.8 + 0.16 * (i / 10))});
  const auto k = CameraIntrinsics::default_depth_camera();
  int within = 0, total_outliers = 0;
  const int seeds = 200;
  for (int seed = 0; seed < seeds; ++seed) {
    NoiseSpec n;
    n.outlier_fraction = 0.3;
    n.seed = static_cast<std::uint64_t>(seed);
    const auto obs = observe_landmarks(s, facing_wall(), k, n, 0);
    ASSERT_EQ(obs.size(), 100u);
    const auto out = std::count_if(obs.begin(), obs.end(), [](const auto& o) { return o.is_outlier; });
    total_outliers += static_cast<int>(out);
    within += std::abs(out - 30) <= 10;
  }
  EXPECT_NEAR(static_cast<double>(total_outliers) / seeds, 30.0, 2.0);
  EXPECT_GE(within, seeds * 95 / 100);
}

TEST(ObserveLandmarksProperty, EveryObservationProjectsInsideImage) {
  const auto scene = fixtures::reference_room();
  const auto k = CameraIntrinsics::default_depth_camera();
  NoiseSpec n;
  n.depth_rel_sigma = 0.01;
  n.outlier_fraction = 0.3;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    n.seed = seed;
    for (const auto& s : simulate_trajectory(fixtures::stereo_sweep(), seed)) {
      for (const auto& o : observe_landmarks(scene, s.truth, k, n, s.frame_id)) {
        ASSERT_GT(o.camera_point.z(), 0.0);
        const Pixel p = project(k, o.camera_point);
        ASSERT_TRUE(k.contains(p.u, p.v)) << p.u << "," << p.v;
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 10000u);
}

TEST(Render2dScan, RoomWidthFromCentredSensor) {
  const auto scene = fixtures::reference_room();
  const Pose p = look_pose({fixtures::kRoomWidth / 2, 3.0, 1.5}, 0.0);
  const auto cloud = render_2d_scan(scene, p, 0.25 * kPi / 180, 30.0, NoiseSpec{});
  double lo = 1e9, hi = -1e9;
  for (const auto& q : cloud.points) {
    lo = std::min(lo, q.x());
    hi = std::max(hi, q.x());
    ASSERT_DOUBLE_EQ(q.z(), 1.5);
  }
  EXPECT_NEAR(hi - lo, 9.140, 0.001);
}

TEST(Render2dScan, EmptySceneAndBeamCount) {
  const Pose p = look_pose({0, 0, 1}, 0.3);
  EXPECT_TRUE(render_2d_scan(SceneSpec{}, p, 0.01, 30, NoiseSpec{}).empty());

  // Closed box around the sensor: every beam hits.
  SceneSpec closed;
  closed.boxes.push_back({{-5, -5, 0}, {5, 5, 2}, "room"});
  for (double res : {0.01, 0.1, 0.7, 2 * kPi / 360}) {
    const auto c = render_2d_scan(closed, p, res, 30, NoiseSpec{});
    EXPECT_EQ(c.size(), static_cast<std::size_t>(std::ceil(2 * kPi / res - 1e-12))) << res;
  }
  // A single wall: beams that miss are dropped.
  const auto wall = render_2d_scan(wall_at_3m(), look_pose(Vec3::Zero(), 0.0), 0.01, 30, NoiseSpec{});
  EXPECT_GT(wall.size(), 0u);
  EXPECT_LT(wall.size(), static_cast<std::size_t>(std::ceil(2 * kPi / 0.01)));
  // Range cap.
  EXPECT_TRUE(render_2d_scan(wall_at_3m(), look_pose(Vec3::Zero(), 0.0), 0.01, 2.5, NoiseSpec{}).empty());
  EXPECT_CODE(render_2d_scan(closed, p, 0.0, 30, NoiseSpec{}), ErrorCode::InvalidArgument);
}

TEST(Scene, JsonRoundtripAndValidation) {
  const auto scene = fixtures::reference_room();
  const auto back = scene_from_json(to_json(scene));
  ASSERT_EQ(back.boxes.size(), scene.boxes.size());
  ASSERT_EQ(back.landmarks.size(), scene.landmarks.size());
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    EXPECT_EQ(back.boxes[i].min, scene.boxes[i].min);
    EXPECT_EQ(back.boxes[i].max, scene.boxes[i].max);
    EXPECT_EQ(back.boxes[i].label, scene.boxes[i].label);
  }
  auto bad = to_json(scene);
  bad["boxes"][0]["max"] = bad["boxes"][0]["min"];
  EXPECT_CODE(scene_from_json(bad), ErrorCode::InvalidArgument);
  auto dup = to_json(scene);
  dup["landmarks"][1]["id"] = dup["landmarks"][0]["id"];
  EXPECT_CODE(scene_from_json(dup), ErrorCode::InvalidArgument);
}

TEST(Scene, TrajectoryJsonRoundtrip) {
  const auto t = fixtures::stereo_sweep();
  const auto back = trajectory_from_json(to_json(t));
  ASSERT_EQ(back.waypoints.size(), t.waypoints.size());
  EXPECT_EQ(back.frame_rate, t.frame_rate);
  EXPECT_EQ(back.motion_noise.trans_sigma, t.motion_noise.trans_sigma);
  for (std::size_t i = 0; i < t.waypoints.size(); ++i) {
    EXPECT_LE((back.waypoints[i].rotation - t.waypoints[i].rotation).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(back.waypoints[i].translation, t.waypoints[i].translation);
  }
}

TEST(Scene, RoomFixtureDimensions) {
  const auto s = fixtures::reference_room();
  const Box* left = s.find("wall_left");
  const Box* right = s.find("wall_right");
  const Box* shelf = s.find("shelf");
  const Box* lintel = s.find("lintel");
  ASSERT_TRUE(left && right && shelf && lintel);
  EXPECT_NEAR(right->min.x() - left->max.x(), 9.140, 1e-12);
  EXPECT_NEAR(shelf->max.x() - shelf->min.x(), 0.690, 1e-12);
  EXPECT_NEAR(shelf->max.z() - shelf->min.z(), 2.130, 1e-12);
  EXPECT_NEAR(lintel->min.z(), 0.950, 1e-12);
}

TEST(LoopClosures, StereoSweepRevisitsStart) {
  const auto samples = simulate_trajectory(fixtures::stereo_sweep(), 0);
  const auto loops = declare_loop_closures(samples);
  ASSERT_FALSE(loops.empty());
  for (const auto& [a, b] : loops) {
    EXPECT_LT(a + 10, b);
    EXPECT_LE((samples[a].truth.translation - samples[b].truth.translation).norm(), 0.5);
  }
}
