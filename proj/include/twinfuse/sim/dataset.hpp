#pragma once

// A simulated scan as a unit: trajectory samples, depth frames, landmark
// observations, planar scans and scripted detections, plus its on-disk form.
//
// Directory layout written by save_dataset():
//   intrinsics.json         {fx, fy, cx, cy, width, height}
//   trajectory.json         [{frame_id, timestamp, truth:{rotation,translation}, odometry:{...}}]
//   loops.json              [[older_frame_id, newer_frame_id], ...]
//   observations.jsonl      one {frame_id, landmark_id, camera_point, is_outlier} per line
//   detections.jsonl        one DETECTION payload per line
//   frames/NNNNNN.depth     DEPTH_FRAME wire payload (big-endian)
//   scans/NNNNNN.ply        planar scan in the sensor frame

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "twinfuse/defect/defect_geo.hpp"
#include "twinfuse/fusion/protocol.hpp"
#include "twinfuse/ply.hpp"
#include "twinfuse/sim/io.hpp"
#include "twinfuse/sim/scan_sim.hpp"
#include "twinfuse/slam/pipeline.hpp"

namespace twinfuse::sim {

struct SimulateOptions {
  CameraIntrinsics intrinsics = CameraIntrinsics::default_depth_camera();
  double depth_sigma = 0.0;       // multiplicative depth / range noise
  double outlier_fraction = 0.0;  // landmark outliers
  double landmark_sigma = 0.0;    // landmark position noise, fraction of range
  std::uint64_t seed = 0;
  bool depth_frames = true;
  bool planar_scans = false;
  double angular_res = 0.25 * std::numbers::pi / 180.0;
  double max_range = 30.0;
  bool detections = true;
  defect::ScriptedDetectorConfig detector;
};

struct Dataset {
  CameraIntrinsics intrinsics;
  std::vector<TrajectorySample> samples;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> loops;
  std::vector<std::vector<LandmarkObservation>> observations;  // per sample
  std::vector<std::optional<DepthFrame>> frames;               // per sample
  std::vector<std::optional<PointCloud>> scans;                // per sample, sensor frame
  std::vector<defect::Detection2D> detections;
};

inline Dataset simulate_dataset(const SceneSpec& scene, const TrajectorySpec& traj, const SimulateOptions& o) {
  Dataset d;
  d.intrinsics = o.intrinsics;
  d.samples = simulate_trajectory(traj, o.seed);
  d.loops = declare_loop_closures(d.samples);
  const NoiseSpec depth_noise{o.depth_sigma, 0.0, o.seed};
  const NoiseSpec lm_noise{o.landmark_sigma, o.outlier_fraction, o.seed};
  for (const auto& s : d.samples) {
    d.observations.push_back(scene.landmarks.empty()
                                 ? std::vector<LandmarkObservation>{}
                                 : observe_landmarks(scene, s.truth, o.intrinsics, lm_noise, s.frame_id));
    if (o.depth_frames) {
      DepthFrame f = render_depth_frame(scene, s.truth, o.intrinsics, depth_noise, s.frame_id);
      f.timestamp = s.timestamp;
      d.frames.emplace_back(std::move(f));
    } else {
      d.frames.emplace_back();
    }
    if (o.planar_scans) {
      PointCloud world = render_2d_scan(scene, s.truth, o.angular_res, o.max_range, depth_noise, s.frame_id);
      const Pose w2s = s.truth.inverse();
      for (auto& p : world.points) p = w2s * p;
      d.scans.emplace_back(std::move(world));
    } else {
      d.scans.emplace_back();
    }
    if (o.detections && o.depth_frames) {
      auto dets = defect::scripted_detections(scene, s.truth, o.intrinsics, s.frame_id, o.detector);
      d.detections.insert(d.detections.end(), dets.begin(), dets.end());
    }
  }
  return d;
}

/// Pipeline input for each sample; the first frame carries the true start
/// pose as its hint (the gauge anchor).
inline std::vector<slam::FrameInput> frame_inputs(const Dataset& d, bool with_depth = true) {
  std::vector<slam::FrameInput> out;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    slam::FrameInput f;
    f.frame_id = d.samples[i].frame_id;
    f.observations = d.observations[i];
    if (with_depth) f.depth = d.frames[i];
    if (i == 0) f.pose_hint = d.samples[i].truth;
    out.push_back(std::move(f));
  }
  return out;
}

/// Reconstructs the dataset. Depth frames go through the pipeline map;
/// planar scans are placed with the optimised poses and merged into it.
inline slam::PipelineResult reconstruct(const Dataset& d, slam::PipelineConfig cfg) {
  cfg.intrinsics = d.intrinsics;
  if (cfg.loop_closures.empty()) cfg.loop_closures = d.loops;
  slam::PipelineResult r = slam::run_pipeline(frame_inputs(d), cfg);
  bool any_scan = false;
  for (const auto& s : d.scans) any_scan |= s.has_value();
  if (any_scan) {
    PointCloud merged = r.map;
    for (std::size_t i = 0; i < d.scans.size(); ++i) {
      if (!d.scans[i]) continue;
      for (const auto& p : d.scans[i]->points) merged.points.push_back(r.trajectory[i] * p);
    }
    if (merged.colors) merged.colors.reset();
    r.map = cfg.voxel > 0 ? slam::voxel_downsample(merged, cfg.voxel) : merged;
  }
  return r;
}

/// Locates each detection against its own depth frame at `poses[i]`, clusters
/// the anchors in stream order and upserts every resulting defect into
/// `store`. Detections without valid depth under their box are skipped.
inline std::vector<defect::DefectRecord> survey_defects(const Dataset& d, const std::vector<Pose>& poses,
                                                        fusion::Store& store, double radius = 0.1,
                                                        const std::string& scope = "") {
  if (poses.size() != d.samples.size()) throw Error(ErrorCode::InvalidArgument, "one pose per sample required");
  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < d.samples.size(); ++i) index[d.samples[i].frame_id] = i;
  defect::Clusterer clusters(radius);
  for (const auto& det : d.detections) {
    auto it = index.find(det.frame_id);
    if (it == index.end() || !d.frames[it->second]) continue;
    try {
      const Vec3 a = defect::locate(det, *d.frames[it->second], d.intrinsics, poses[it->second]);
      clusters.add(a, det.label, det.confidence, det.frame_id);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoValidDepth) throw;
    }
  }
  for (const auto& r : clusters.records()) defect::register_defect(r, store, radius, scope);
  return clusters.records();
}

// ---- JSON helpers ----

inline json intrinsics_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline CameraIntrinsics intrinsics_from(const json& j) {
  try {
    CameraIntrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    if (!k.valid()) throw Error(ErrorCode::ParseError, "invalid intrinsics");
    return k;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("intrinsics: ") + e.what());
  }
}

/// Reconstructed trajectory file: [{frame_id, rotation[9], translation[3]}].
inline json trajectory_output_json(const std::vector<std::uint64_t>& ids, const std::vector<Pose>& poses) {
  json arr = json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    json e = pose_json(poses[i]);
    e["frame_id"] = ids[i];
    arr.push_back(e);
  }
  return arr;
}

inline std::map<std::uint64_t, Pose> trajectory_output_from(const json& j) {
  std::map<std::uint64_t, Pose> out;
  try {
    for (const auto& e : j) out[e.at("frame_id").get<std::uint64_t>()] = pose_from(e);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("trajectory output: ") + e.what());
  }
  return out;
}

/// PipelineConfig from a JSON object; absent keys keep their defaults.
inline slam::PipelineConfig pipeline_config_from(const json& j) {
  slam::PipelineConfig c;
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "config must be a JSON object");
  try {
    if (j.contains("ransac")) {
      const auto& r = j["ransac"];
      c.ransac.inlier_threshold = r.value("inlier_threshold", c.ransac.inlier_threshold);
      c.ransac.confidence = r.value("confidence", c.ransac.confidence);
      c.ransac.max_iterations = r.value("max_iterations", c.ransac.max_iterations);
      c.ransac.min_inliers = r.value("min_inliers", c.ransac.min_inliers);
    }
    c.optimize_every = j.value("optimize_every", c.optimize_every);
    c.graph_max_iters = j.value("graph_max_iters", c.graph_max_iters);
    c.graph_tol = j.value("graph_tol", c.graph_tol);
    c.odometry_weight = j.value("odometry_weight", c.odometry_weight);
    c.fallback_weight_scale = j.value("fallback_weight_scale", c.fallback_weight_scale);
    c.loop_weight = j.value("loop_weight", c.loop_weight);
    c.proximity_loops = j.value("proximity_loops", c.proximity_loops);
    c.proximity_radius = j.value("proximity_radius", c.proximity_radius);
    c.proximity_min_gap = j.value("proximity_min_gap", c.proximity_min_gap);
    c.voxel = j.value("voxel", c.voxel);
    c.cloud_stride = j.value("cloud_stride", c.cloud_stride);
    c.max_map_depth = j.value("max_map_depth", c.max_map_depth);
    c.async_mapping = j.value("async_mapping", c.async_mapping);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loop_closures"))
      for (const auto& p : j["loop_closures"])
        c.loop_closures.emplace_back(p.at(0).get<std::uint64_t>(), p.at(1).get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("config: ") + e.what());
  }
  c.ransac.validate();
  return c;
}

inline json pipeline_config_json(const slam::PipelineConfig& c) {
  json loops = json::array();
  for (const auto& [a, b] : c.loop_closures) loops.push_back({a, b});
  return {{"ransac",
           {{"inlier_threshold", c.ransac.inlier_threshold},
            {"confidence", c.ransac.confidence},
            {"max_iterations", c.ransac.max_iterations},
            {"min_inliers", c.ransac.min_inliers}}},
          {"optimize_every", c.optimize_every},
          {"graph_max_iters", c.graph_max_iters},
          {"graph_tol", c.graph_tol},
          {"odometry_weight", c.odometry_weight},
          {"fallback_weight_scale", c.fallback_weight_scale},
          {"loop_weight", c.loop_weight},
          {"proximity_loops", c.proximity_loops},
          {"proximity_radius", c.proximity_radius},
          {"proximity_min_gap", c.proximity_min_gap},
          {"voxel", c.voxel},
          {"cloud_stride", c.cloud_stride},
          {"max_map_depth", c.max_map_depth},
          {"async_mapping", c.async_mapping},
          {"seed", c.seed},
          {"loop_closures", loops}};
}

// ---- directory I/O ----

namespace detail {

inline std::string numbered(std::uint64_t id, const char* ext) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%06llu%s", static_cast<unsigned long long>(id), ext);
  return buf;
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + p.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

inline void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_json((dir / "intrinsics.json").string(), intrinsics_json(d.intrinsics));

  json traj = json::array();
  for (const auto& s : d.samples)
    traj.push_back({{"frame_id", s.frame_id},
                    {"timestamp", s.timestamp},
                    {"truth", pose_json(s.truth)},
                    {"odometry", pose_json(s.odometry)}});
  save_json((dir / "trajectory.json").string(), traj);

  json loops = json::array();
  for (const auto& [a, b] : d.loops) loops.push_back({a, b});
  save_json((dir / "loops.json").string(), loops);

  {
    std::ofstream out(dir / "observations.jsonl");
    for (std::size_t i = 0; i < d.samples.size(); ++i)
      for (const auto& o : d.observations[i])
        out << json{{"frame_id", d.samples[i].frame_id},
                    {"landmark_id", o.landmark_id},
                    {"camera_point", vec_json(o.camera_point)},
                    {"is_outlier", o.is_outlier}}
                   .dump()
            << '\n';
  }
  {
    std::ofstream out(dir / "detections.jsonl");
    for (const auto& det : d.detections) out << defect::to_json(det).dump() << '\n';
  }
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    if (d.frames[i]) {
      fs::create_directories(dir / "frames");
      detail::write_bytes(dir / "frames" / detail::numbered(d.samples[i].frame_id, ".depth"),
                          fusion::proto::encode_depth_frame(*d.frames[i]));
    }
    if (d.scans[i]) {
      fs::create_directories(dir / "scans");
      ply::save((dir / "scans" / detail::numbered(d.samples[i].frame_id, ".ply")).string(), *d.scans[i]);
    }
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  Dataset d;
  d.intrinsics = intrinsics_from(load_json((dir / "intrinsics.json").string()));
  std::map<std::uint64_t, std::size_t> index;
  try {
    for (const auto& e : load_json((dir / "trajectory.json").string())) {
      TrajectorySample s;
      s.frame_id = e.at("frame_id").get<std::uint64_t>();
      s.timestamp = e.value("timestamp", 0.0);
      s.truth = pose_from(e.at("truth"));
      s.odometry = pose_from(e.at("odometry"));
      index[s.frame_id] = d.samples.size();
      d.samples.push_back(s);
    }
    if (fs::exists(dir / "loops.json"))
      for (const auto& p : load_json((dir / "loops.json").string()))
        d.loops.emplace_back(p.at(0).get<std::uint64_t>(), p.at(1).get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("dataset: ") + e.what());
  }
  d.observations.resize(d.samples.size());
  d.frames.resize(d.samples.size());
  d.scans.resize(d.samples.size());

  auto each_line = [](const fs::path& p, auto&& fn) {
    if (!fs::exists(p)) return;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = json::parse(line, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::ParseError, p.string() + ": bad JSON line");
      fn(j);
    }
  };
  each_line(dir / "observations.jsonl", [&](const json& j) {
    auto it = index.find(j.at("frame_id").get<std::uint64_t>());
    if (it == index.end()) return;
    LandmarkObservation o;
    o.landmark_id = j.at("landmark_id").get<int>();
    o.camera_point = vec_from(j.at("camera_point"));
    o.is_outlier = j.value("is_outlier", false);
    d.observations[it->second].push_back(o);
  });
  each_line(dir / "detections.jsonl", [&](const json& j) { d.detections.push_back(defect::detection_from_json(j)); });

  for (const auto& [fid, i] : index) {
    const auto fp = dir / "frames" / detail::numbered(fid, ".depth");
    if (fs::exists(fp)) {
      DepthFrame f = fusion::proto::decode_depth_frame(detail::read_bytes(fp));
      f.timestamp = d.samples[i].timestamp;
      d.frames[i] = std::move(f);
    }
    const auto sp = dir / "scans" / detail::numbered(fid, ".ply");
    if (fs::exists(sp)) d.scans[i] = ply::load(sp.string());
  }
  return d;
}

}  // namespace twinfuse::sim
