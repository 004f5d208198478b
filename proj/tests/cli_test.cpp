#include <gtest/gtest.h>

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>

#include "twinfuse/eval/report.hpp"
#include "twinfuse/fixtures.hpp"
#include "twinfuse/fusion/client.hpp"
#include "twinfuse/ply.hpp"
#include "twinfuse/sim/dataset.hpp"
#include "test_util.hpp"

extern char** environ;

using namespace twinfuse;
using twinfuse::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kCli = TWINFUSE_CLI;
const fs::path kData = fs::path(TWINFUSE_SOURCE_DIR) / "data";

struct Run {
  int status = -1;
  std::string output;
};

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

Run run(const std::vector<std::string>& args) {
  std::string cmd = quote(kCli.string());
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// `twinfuse serve` in the background; reads the chosen port from its banner.
class ServeProcess {
 public:
  ServeProcess(const std::string& data_flag, const std::string& env_data) {
    int fds[2];
    if (::pipe(fds) != 0) throw std::runtime_error("pipe");
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, fds[1], STDOUT_FILENO);
    posix_spawn_file_actions_addclose(&fa, fds[0]);
    std::vector<std::string> args{kCli.string(), "serve", "--bind", "127.0.0.1:0", "--data", data_flag};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    std::vector<std::string> env_store;
    for (char** e = environ; *e; ++e)
      if (std::string_view(*e).rfind("TWINFUSE_DATA=", 0) != 0) env_store.emplace_back(*e);
    if (!env_data.empty()) env_store.push_back("TWINFUSE_DATA=" + env_data);
    std::vector<char*> envp;
    for (auto& e : env_store) envp.push_back(e.data());
    envp.push_back(nullptr);
    if (posix_spawn(&pid_, argv[0], &fa, nullptr, argv.data(), envp.data()) != 0) throw std::runtime_error("spawn");
    posix_spawn_file_actions_destroy(&fa);
    ::close(fds[1]);
    out_ = ::fdopen(fds[0], "r");
    char line[512];
    if (std::fgets(line, sizeof line, out_)) banner_ = line;
    const auto at = banner_.find(" on port ");
    if (at != std::string::npos) port_ = static_cast<std::uint16_t>(std::stoi(banner_.substr(at + 9)));
  }
  ~ServeProcess() { stop(); }

  std::uint16_t port() const { return port_; }
  std::string endpoint() const { return "127.0.0.1:" + std::to_string(port_); }
  const std::string& banner() const { return banner_; }

  /// SIGTERM, then returns the exit status and remaining output.
  Run stop() {
    Run r;
    if (pid_ <= 0) return r;
    ::kill(pid_, SIGTERM);
    char buf[512];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, out_)) > 0) r.output.append(buf, n);
    int st = 0;
    ::waitpid(pid_, &st, 0);
    std::fclose(out_);
    pid_ = -1;
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
  }

 private:
  pid_t pid_ = -1;
  FILE* out_ = nullptr;
  std::string banner_;
  std::uint16_t port_ = 0;
};

sim::SimulateOptions small_noisy(std::uint64_t seed) {
  sim::SimulateOptions o;
  o.intrinsics = CameraIntrinsics::from_fov(160, 120, 87, 58);
  o.depth_sigma = 0.01;
  o.outlier_fraction = 0.3;
  o.landmark_sigma = 0.001;
  o.seed = seed;
  return o;
}

std::vector<std::string> small_noisy_args(const fs::path& trajectory, std::uint64_t seed, const fs::path& out) {
  return {"simulate", "--scene", (kData / "reference_room.scene.json").string(), "--trajectory", trajectory.string(),
          "--noise-sigma", "0.01", "--outliers", "0.3", "--landmark-sigma", "0.001", "--seed", std::to_string(seed),
          "--width", "160", "--height", "120", "--out", out.string()};
}

}  // namespace

TEST(Cli, ShippedDataMatchesBuiltInFixtures) {
  TempDir dir;
  const auto r = run({"export-fixtures", "--out", dir.str()});
  ASSERT_EQ(r.status, 0) << r.output;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) {
    ++files;
    const auto shipped = kData / e.path().filename();
    ASSERT_TRUE(fs::exists(shipped)) << shipped;
    EXPECT_EQ(slurp(e.path()), slurp(shipped)) << e.path().filename();
  }
  std::size_t shipped_files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(kData)) ++shipped_files;
  EXPECT_EQ(files, shipped_files);
  EXPECT_EQ(files, 7u);
}

TEST(Cli, ShippedFilesParse) {
  const auto scene = sim::scene_from_json(sim::load_json((kData / "reference_room.scene.json").string()));
  EXPECT_EQ(scene.boxes.size(), fixtures::reference_room().boxes.size());
  EXPECT_EQ(scene.defects.size(), 3u);
  const auto m = eval::measurements_from_json(sim::load_json((kData / "stereo.measurements.json").string()));
  EXPECT_EQ(m.size(), 3u);
  const auto cfg = sim::pipeline_config_from(sim::load_json((kData / "reconstruct.json").string()));
  EXPECT_EQ(cfg.voxel, fixtures::measurement_pipeline_config().voxel);
}

// simulate -> reconstruct -> evaluate through the binary, each stage compared
// byte-for-byte with the same computation done in process.
TEST(Cli, SimulateReconstructEvaluateMatchInProcess) {
  TempDir dir;
  const auto traj_file = kData / "defect_survey.trajectory.json";
  const auto scan = dir / "scan";
  auto r = run(small_noisy_args(traj_file, 3, scan));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("frames 17"), std::string::npos) << r.output;

  const auto d = sim::simulate_dataset(sim::scene_from_json(sim::load_json((kData / "reference_room.scene.json").string())),
                                       sim::trajectory_from_json(sim::load_json(traj_file.string())), small_noisy(3));
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto path = scan / "frames" / sim::detail::numbered(d.samples[i].frame_id, ".depth");
    const auto bytes = sim::detail::read_bytes(path);
    ASSERT_EQ(bytes, fusion::proto::encode_depth_frame(*d.frames[i])) << path;
  }
  const auto loaded = sim::load_dataset(scan);
  ASSERT_EQ(loaded.samples.size(), d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    ASSERT_EQ(loaded.samples[i].odometry.translation, d.samples[i].odometry.translation);
    ASSERT_EQ(loaded.observations[i].size(), d.observations[i].size());
  }
  EXPECT_EQ(loaded.detections.size(), d.detections.size());

  const auto map = dir / "map.ply";
  const auto traj_out = dir / "traj.json";
  r = run({"reconstruct", "--in", scan.string(), "--config", (kData / "reconstruct.json").string(), "--out",
           map.string(), "--trajectory-out", traj_out.string(), "--seed", "5"});
  ASSERT_EQ(r.status, 0) << r.output;
  auto cfg = fixtures::measurement_pipeline_config();
  cfg.seed = 5;
  const auto rec = sim::reconstruct(loaded, cfg);
  EXPECT_EQ(slurp(map), ply::to_string(rec.map));
  EXPECT_EQ(sim::load_json(traj_out.string()), sim::trajectory_output_json(rec.frame_ids, rec.trajectory));

  const auto spec_file = dir / "walls.json";
  const std::vector<eval::MeasurementSpec> specs{
      {"Left To Right", eval::Axis::X, Aabb{{-0.1, 3.0, 1.0}, {9.3, 5.0, 2.0}}, 9.140}};
  sim::save_json(spec_file.string(), eval::measurements_json(specs));
  const auto cloud = ply::load(map.string());
  std::vector<eval::ErrorRow> rows;
  for (const auto& s : specs) rows.push_back(eval::measure_row(cloud, s));
  for (const std::string fmt : {"csv", "json", "text"}) {
    const auto out = dir / ("report." + fmt);
    r = run({"evaluate", "--map", map.string(), "--measurements", spec_file.string(), "--format", fmt, "--out",
             out.string()});
    ASSERT_EQ(r.status, 0) << r.output;
    EXPECT_EQ(slurp(out), eval::emit_report(rows, eval::parse_format(fmt))) << fmt;
  }
  r = run({"evaluate", "--map", map.string(), "--measurements", spec_file.string(), "--format", "csv"});
  EXPECT_EQ(r.output, eval::emit_report(rows, eval::ReportFormat::Csv));
}

TEST(Cli, ServeIngestQueryAndRestart) {
  TempDir dir;
  const auto scan = dir / "scan";
  ASSERT_EQ(run(small_noisy_args(kData / "defect_survey.trajectory.json", 1, scan)).status, 0);
  const auto store_dir = dir / "store";
  const auto ignored = dir / "ignored";
  std::size_t frames = 0;
  {
    ServeProcess server(ignored.string(), store_dir.string());
    ASSERT_NE(server.port(), 0) << server.banner();
    const auto r = run({"ingest", "--server", server.endpoint(), "--in", scan.string(), "--pose-source", "truth"});
    ASSERT_EQ(r.status, 0) << r.output;
    EXPECT_NE(r.output.find("frames 17"), std::string::npos) << r.output;
    const auto q = run({"query", "--server", server.endpoint(), "--kind", "defect"});
    ASSERT_EQ(q.status, 0) << q.output;
    EXPECT_EQ(nlohmann::json::parse(q.output).size(), 3u);
    const auto fr = run({"query", "--server", server.endpoint(), "--kind", "frame"});
    frames = nlohmann::json::parse(fr.output).size();
    EXPECT_EQ(frames, 17u);
    const auto stopped = server.stop();
    EXPECT_EQ(stopped.status, 0);
    EXPECT_NE(stopped.output.find("located"), std::string::npos);
  }
  EXPECT_TRUE(fs::exists(store_dir / fusion::Store::kWalName));
  EXPECT_FALSE(fs::exists(ignored));

  ServeProcess again(store_dir.string(), "");
  ASSERT_NE(again.port(), 0) << again.banner();
  const auto fr = run({"query", "--server", again.endpoint(), "--kind", "frame", "--payload"});
  const auto arr = nlohmann::json::parse(fr.output);
  ASSERT_EQ(arr.size(), frames);
  const auto first = fusion::base64_decode(arr[0].at("payload").get<std::string>());
  EXPECT_EQ(first, sim::detail::read_bytes(scan / "frames" / "000000.depth"));
}

TEST(Cli, ErrorsGiveNonZeroExit) {
  EXPECT_NE(run({}).status, 0);
  EXPECT_NE(run({"bogus"}).status, 0);
  EXPECT_NE(run({"simulate", "--scene", "/nonexistent.json", "--trajectory", "/nonexistent.json", "--out", "/tmp/x"}).status, 0);
  TempDir dir;
  {
    std::ofstream(dir / "bad.json") << "{\"boxes\": 3}";
  }
  const auto r = run({"simulate", "--scene", (dir / "bad.json").string(), "--trajectory",
                      (kData / "stereo_sweep.trajectory.json").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.status, 2) << r.output;
  EXPECT_NE(r.output.find("twinfuse:"), std::string::npos);
  EXPECT_EQ(run({"serve", "--bind", "127.0.0.1:1"}).status, 2);
  EXPECT_EQ(run({"evaluate", "--map", (kData / "reconstruct.json").string(), "--measurements",
                 (kData / "stereo.measurements.json").string(), "--format", "xml"})
                .status,
            2);
}
