#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "twinfuse/fixtures.hpp"
#include "twinfuse/sim/dataset.hpp"
#include "twinfuse/twinfuse.hpp"

namespace fs = std::filesystem;
using namespace twinfuse;

namespace {

std::atomic<bool> g_running{true};

void on_signal(int) { g_running = false; }

struct SimulateArgs {
  std::string scene, trajectory, out;
  double noise_sigma = 0.0, outliers = 0.0, landmark_sigma = 0.001;
  std::uint64_t seed = 0;
  int width = 640, height = 480;
  bool planar = false, no_depth = false;
  double angular_res_deg = 0.25, max_range = 30.0;
};

int run_simulate(const SimulateArgs& a) {
  const auto scene = sim::scene_from_json(sim::load_json(a.scene));
  const auto traj = sim::trajectory_from_json(sim::load_json(a.trajectory));
  sim::SimulateOptions o;
  o.intrinsics = CameraIntrinsics::from_fov(a.width, a.height, 87.0, 58.0);
  o.depth_sigma = a.noise_sigma;
  o.outlier_fraction = a.outliers;
  o.landmark_sigma = a.landmark_sigma;
  o.seed = a.seed;
  o.depth_frames = !a.no_depth;
  o.planar_scans = a.planar;
  o.angular_res = a.angular_res_deg * std::numbers::pi / 180.0;
  o.max_range = a.max_range;
  const auto d = sim::simulate_dataset(scene, traj, o);
  sim::save_dataset(a.out, d);
  std::size_t obs = 0;
  for (const auto& v : d.observations) obs += v.size();
  std::cout << "frames " << d.samples.size() << ", observations " << obs << ", detections " << d.detections.size()
            << ", loop closures " << d.loops.size() << " -> " << a.out << '\n';
  return 0;
}

struct ReconstructArgs {
  std::string in, config, out, trajectory_out;
  std::optional<std::uint64_t> seed;
};

int run_reconstruct(const ReconstructArgs& a) {
  slam::PipelineConfig cfg;
  if (!a.config.empty()) cfg = sim::pipeline_config_from(sim::load_json(a.config));
  if (a.seed) cfg.seed = *a.seed;
  const auto d = sim::load_dataset(a.in);
  const auto r = sim::reconstruct(d, cfg);
  ply::save(a.out, r.map);
  if (!a.trajectory_out.empty()) sim::save_json(a.trajectory_out, sim::trajectory_output_json(r.frame_ids, r.trajectory));
  std::size_t fallbacks = 0, loops = 0;
  for (const auto& e : r.events) {
    if (e.kind == "odometry-fallback") ++fallbacks;
    if (e.kind == "loop-closure" || e.kind == "proximity-loop") ++loops;
  }
  std::cout << "frames " << r.frame_ids.size() << ", map points " << r.map.points.size() << ", optimizations "
            << r.optimizations << ", loop edges " << loops << ", odometry fallbacks " << fallbacks << '\n';
  return 0;
}

int run_serve(const std::string& bind, std::string data) {
  if (const char* env = std::getenv("TWINFUSE_DATA"); env && *env) data = env;
  if (data.empty()) throw Error(ErrorCode::InvalidArgument, "--data or TWINFUSE_DATA is required");
  fusion::Store store(data);
  fusion::Server server(store);
  server.start(fusion::parse_endpoint(bind));
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving " << data << " on port " << server.port() << " (" << store.size() << " records)" << std::endl;
  server.wait(g_running);
  server.stop();
  const auto& st = server.context().stats();
  std::cout << "messages " << st.messages << ", errors " << st.errors << ", frames " << st.frames << ", detections "
            << st.detections << ", located " << st.located << '\n';
  return 0;
}

struct IngestArgs {
  std::string server, in, poses, pose_source = "odometry", client = "drone";
};

int run_ingest(const IngestArgs& a) {
  const auto d = sim::load_dataset(a.in);
  std::map<std::uint64_t, Pose> poses;
  if (!a.poses.empty()) {
    poses = sim::trajectory_output_from(sim::load_json(a.poses));
  } else {
    if (a.pose_source != "odometry" && a.pose_source != "truth")
      throw Error(ErrorCode::InvalidArgument, "--pose-source must be odometry or truth");
    for (const auto& s : d.samples) poses[s.frame_id] = a.pose_source == "truth" ? s.truth : s.odometry;
  }
  std::multimap<std::uint64_t, const defect::Detection2D*> dets;
  for (const auto& det : d.detections) dets.emplace(det.frame_id, &det);

  fusion::Client client(fusion::parse_endpoint(a.server));
  const std::string session = client.hello(a.client);
  std::size_t frames = 0, pose_msgs = 0, det_msgs = 0;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto fid = d.samples[i].frame_id;
    if (d.frames[i]) {
      client.call(fusion::proto::Kind::DepthFrame, fusion::proto::encode_depth_frame(*d.frames[i]));
      ++frames;
    }
    if (auto p = poses.find(fid); p != poses.end()) {
      client.call(fusion::proto::Kind::Pose, fusion::proto::to_json(fusion::proto::PoseMessage{fid, p->second}));
      ++pose_msgs;
    }
    auto [lo, hi] = dets.equal_range(fid);
    for (auto it = lo; it != hi; ++it) {
      client.call(fusion::proto::Kind::Detection, defect::to_json(*it->second));
      ++det_msgs;
    }
  }
  std::cout << "session " << session << ": frames " << frames << ", poses " << pose_msgs << ", detections "
            << det_msgs << " acknowledged\n";
  return 0;
}

struct QueryArgs {
  std::string server, kind, region;
  std::vector<std::int64_t> time_range;
  bool payload = false;
};

int run_query(const QueryArgs& a) {
  nlohmann::json q = nlohmann::json::object();
  if (!a.kind.empty()) q["kind"] = a.kind;
  if (!a.time_range.empty()) q["time_range"] = a.time_range;
  if (!a.region.empty()) q["region"] = nlohmann::json::parse(a.region);
  q["with_payload"] = a.payload;
  fusion::Client client(fusion::parse_endpoint(a.server));
  client.hello("query");
  std::cout << client.call(fusion::proto::Kind::Query, q).dump(2) << '\n';
  return 0;
}

struct EvaluateArgs {
  std::string map, measurements, format = "text", out;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto cloud = ply::load(a.map);
  const auto specs = eval::measurements_from_json(sim::load_json(a.measurements));
  std::vector<eval::ErrorRow> rows;
  for (const auto& s : specs) rows.push_back(eval::measure_row(cloud, s));
  const std::string text = eval::emit_report(rows, eval::parse_format(a.format));
  if (a.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + a.out);
    out << text;
  }
  return 0;
}

int run_export_fixtures(const std::string& out) {
  fs::create_directories(out);
  const fs::path d(out);
  sim::save_json((d / "reference_room.scene.json").string(), sim::to_json(fixtures::reference_room()));
  sim::save_json((d / "stereo_sweep.trajectory.json").string(), sim::to_json(fixtures::stereo_sweep()));
  sim::save_json((d / "lidar_sweep.trajectory.json").string(), sim::to_json(fixtures::lidar_sweep()));
  sim::save_json((d / "defect_survey.trajectory.json").string(), sim::to_json(fixtures::defect_survey()));
  sim::save_json((d / "stereo.measurements.json").string(), eval::measurements_json(fixtures::stereo_measurements()));
  sim::save_json((d / "lidar.measurements.json").string(), eval::measurements_json(fixtures::lidar_measurements()));
  sim::save_json((d / "reconstruct.json").string(), sim::pipeline_config_json(fixtures::measurement_pipeline_config()));
  std::cout << "wrote fixtures to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"twinfuse: synthetic drone scanning, reconstruction, fusion store and evaluation"};
  app.require_subcommand(1);

  SimulateArgs sa;
  auto* sim_cmd = app.add_subcommand("simulate", "render a synthetic scan into a directory");
  sim_cmd->add_option("--scene", sa.scene, "scene JSON")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--trajectory", sa.trajectory, "trajectory JSON")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--noise-sigma", sa.noise_sigma, "relative depth noise sigma")->check(CLI::NonNegativeNumber);
  sim_cmd->add_option("--outliers", sa.outliers, "landmark outlier fraction")->check(CLI::Range(0.0, 0.999999));
  sim_cmd->add_option("--landmark-sigma", sa.landmark_sigma, "landmark position noise, fraction of range")
      ->capture_default_str();
  sim_cmd->add_option("--seed", sa.seed, "random seed");
  sim_cmd->add_option("--out", sa.out, "output directory")->required();
  sim_cmd->add_option("--width", sa.width, "image width")->capture_default_str();
  sim_cmd->add_option("--height", sa.height, "image height")->capture_default_str();
  sim_cmd->add_flag("--planar", sa.planar, "also render 360 degree planar range scans");
  sim_cmd->add_flag("--no-depth", sa.no_depth, "skip depth frames");
  sim_cmd->add_option("--angular-res", sa.angular_res_deg, "planar scan resolution, degrees")->capture_default_str();
  sim_cmd->add_option("--max-range", sa.max_range, "planar scan range, metres")->capture_default_str();

  ReconstructArgs ra;
  auto* rec_cmd = app.add_subcommand("reconstruct", "estimate poses and build a point-cloud map");
  rec_cmd->add_option("--in", ra.in, "scan directory")->required()->check(CLI::ExistingDirectory);
  rec_cmd->add_option("--config", ra.config, "pipeline config JSON")->check(CLI::ExistingFile);
  rec_cmd->add_option("--out", ra.out, "map PLY")->required();
  rec_cmd->add_option("--trajectory-out", ra.trajectory_out, "trajectory JSON");
  rec_cmd->add_option("--seed", ra.seed, "RANSAC seed (overrides config)");

  std::string bind = "127.0.0.1:7878", data;
  auto* serve_cmd = app.add_subcommand("serve", "run the fusion store service");
  serve_cmd->add_option("--bind", bind, "HOST:PORT")->capture_default_str();
  serve_cmd->add_option("--data", data, "store directory (TWINFUSE_DATA overrides)");

  IngestArgs ia;
  auto* ingest_cmd = app.add_subcommand("ingest", "replay a simulated scan to a server");
  ingest_cmd->add_option("--server", ia.server, "HOST:PORT")->required();
  ingest_cmd->add_option("--in", ia.in, "scan directory")->required()->check(CLI::ExistingDirectory);
  ingest_cmd->add_option("--poses", ia.poses, "reconstructed trajectory JSON to send as POSE")
      ->check(CLI::ExistingFile);
  ingest_cmd->add_option("--pose-source", ia.pose_source, "odometry or truth, when --poses is absent")
      ->capture_default_str();
  ingest_cmd->add_option("--client", ia.client, "client name sent in HELLO")->capture_default_str();

  QueryArgs qa;
  auto* query_cmd = app.add_subcommand("query", "query a running server");
  query_cmd->add_option("--server", qa.server, "HOST:PORT")->required();
  query_cmd->add_option("--kind", qa.kind, "geometry|frame|defect|tag|metadata");
  query_cmd->add_option("--time-range", qa.time_range, "FROM TO (microseconds)")->expected(2);
  query_cmd->add_option("--region", qa.region, R"(JSON box {"min":[..],"max":[..]})");
  query_cmd->add_flag("--payload", qa.payload, "include base64 payloads");

  EvaluateArgs ea;
  auto* eval_cmd = app.add_subcommand("evaluate", "measure a map against ground-truth dimensions");
  eval_cmd->add_option("--map", ea.map, "map PLY")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--measurements", ea.measurements, "measurement JSON")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--format", ea.format, "text|csv|json")->capture_default_str();
  eval_cmd->add_option("--out", ea.out, "output file (default stdout)");

  std::string fixtures_out = "data";
  auto* fix_cmd = app.add_subcommand("export-fixtures", "write the built-in scene, trajectories and measurements");
  fix_cmd->add_option("--out", fixtures_out, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim_cmd) return run_simulate(sa);
    if (*rec_cmd) return run_reconstruct(ra);
    if (*serve_cmd) return run_serve(bind, data);
    if (*ingest_cmd) return run_ingest(ia);
    if (*query_cmd) return run_query(qa);
    if (*eval_cmd) return run_evaluate(ea);
    if (*fix_cmd) return run_export_fixtures(fixtures_out);
  } catch (const Error& e) {
    std::cerr << "twinfuse: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "twinfuse: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
