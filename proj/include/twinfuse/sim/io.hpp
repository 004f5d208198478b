#pragma once

// JSON scene and trajectory files.
//
//   scene:      {"boxes":[{"min":[x,y,z],"max":[x,y,z],"label":"..."}],
//                "landmarks":[{"id":n,"position":[x,y,z]}],
//                "defects":[{"label":"...","position":[x,y,z]}]}      (defects optional)
//   trajectory: {"waypoints":[{"rotation":[9 row-major],"translation":[3]}],
//                "frame_rate":f, "motion_noise":{"rot_sigma":r,"trans_sigma":t},
//                "segment_duration":s}                                 (last key optional)

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>

#include "twinfuse/sim/scan_sim.hpp"
#include "twinfuse/sim/scene.hpp"

namespace twinfuse::sim {

using nlohmann::json;

inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::ParseError, "expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline json pose_json(const Pose& p) {
  json r = json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(p.rotation(i, k));
  return {{"rotation", r}, {"translation", vec_json(p.translation)}};
}

inline Pose pose_from(const json& j) {
  const json& r = j.at("rotation");
  if (!r.is_array() || r.size() != 9) throw Error(ErrorCode::ParseError, "rotation must have 9 entries");
  Pose p;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) p.rotation(i, k) = r[i * 3 + k].get<double>();
  p.translation = vec_from(j.at("translation"));
  if (orthonormality_error(p.rotation) > 1e-6)
    throw Error(ErrorCode::ParseError, "rotation is not orthonormal");
  p.rotation = nearest_rotation(p.rotation);
  return p;
}

inline json to_json(const SceneSpec& s) {
  json boxes = json::array();
  for (const auto& b : s.boxes) boxes.push_back({{"min", vec_json(b.min)}, {"max", vec_json(b.max)}, {"label", b.label}});
  json lms = json::array();
  for (const auto& l : s.landmarks) lms.push_back({{"id", l.id}, {"position", vec_json(l.position)}});
  json out{{"boxes", boxes}, {"landmarks", lms}};
  if (!s.defects.empty()) {
    json d = json::array();
    for (const auto& x : s.defects) d.push_back({{"label", x.label}, {"position", vec_json(x.position)}});
    out["defects"] = d;
  }
  return out;
}

inline SceneSpec scene_from_json(const json& j) {
  try {
    SceneSpec s;
    for (const auto& b : j.at("boxes"))
      s.boxes.push_back(Box{vec_from(b.at("min")), vec_from(b.at("max")), b.value("label", std::string{})});
    if (j.contains("landmarks"))
      for (const auto& l : j.at("landmarks")) s.landmarks.push_back(Landmark{l.at("id").get<int>(), vec_from(l.at("position"))});
    if (j.contains("defects"))
      for (const auto& d : j.at("defects"))
        s.defects.push_back(PlantedDefect{d.at("label").get<std::string>(), vec_from(d.at("position"))});
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("scene: ") + e.what());
  }
}

inline json to_json(const TrajectorySpec& t) {
  json w = json::array();
  for (const auto& p : t.waypoints) w.push_back(pose_json(p));
  return {{"waypoints", w},
          {"frame_rate", t.frame_rate},
          {"motion_noise", {{"rot_sigma", t.motion_noise.rot_sigma}, {"trans_sigma", t.motion_noise.trans_sigma}}},
          {"segment_duration", t.segment_duration}};
}

inline TrajectorySpec trajectory_from_json(const json& j) {
  try {
    TrajectorySpec t;
    for (const auto& w : j.at("waypoints")) t.waypoints.push_back(pose_from(w));
    t.frame_rate = j.at("frame_rate").get<double>();
    if (j.contains("motion_noise")) {
      t.motion_noise.rot_sigma = j["motion_noise"].value("rot_sigma", 0.0);
      t.motion_noise.trans_sigma = j["motion_noise"].value("trans_sigma", 0.0);
    }
    t.segment_duration = j.value("segment_duration", 1.0);
    t.validate();
    return t;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("trajectory: ") + e.what());
  }
}

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

inline void save_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path);
  out << j.dump(2) << '\n';
}

}  // namespace twinfuse::sim
