#pragma once

// Reconstruction pipeline with the odometry / mapping split:
//
//   odometry (stream rate)  frame-to-frame RANSAC on shared landmark ids,
//                           chained onto the latest pose estimate;
//   mapping (every K frames and at loop closures)
//                           Gauss-Newton over an immutable snapshot of the
//                           pose graph, published back atomically.
//
// With `async_mapping` the mapping stage runs on its own thread and the
// odometry stage adopts published results at the next frame boundary without
// ever waiting. Without it, the same snapshots are optimised inline, which is
// bit-reproducible.

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "twinfuse/geometry.hpp"
#include "twinfuse/sim/scan_sim.hpp"
#include "twinfuse/slam/pose_graph.hpp"
#include "twinfuse/slam/registration.hpp"
#include "twinfuse/slam/voxel.hpp"

namespace twinfuse::slam {

using sim::LandmarkObservation;

struct FrameInput {
  std::uint64_t frame_id = 0;
  std::optional<DepthFrame> depth;
  std::vector<LandmarkObservation> observations;
  std::optional<Pose> pose_hint;
};

struct PipelineConfig {
  CameraIntrinsics intrinsics = CameraIntrinsics::default_depth_camera();
  RansacConfig ransac;
  int optimize_every = 10;
  int graph_max_iters = 20;
  double graph_tol = 1e-12;
  double odometry_weight = 1.0;
  double fallback_weight_scale = 0.1;
  double loop_weight = 1.0;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> loop_closures;
  bool proximity_loops = false;
  double proximity_radius = 0.5;
  std::uint64_t proximity_min_gap = 10;
  double voxel = 0.02;  // <= 0 disables downsampling
  int cloud_stride = 2;
  double max_map_depth = 0.0;  // metres, <= 0 keeps every valid pixel
  bool async_mapping = false;
  std::uint64_t seed = 0;
};

struct PipelineEvent {
  std::uint64_t frame_id = 0;
  std::string kind;
  std::string message;
};

struct PipelineResult {
  std::vector<std::uint64_t> frame_ids;
  std::vector<Pose> trajectory;  // optimised, one per frame
  std::vector<Pose> odometry;    // raw chained odometry, before any optimisation
  PoseGraph graph;
  PointCloud map;
  std::vector<PipelineEvent> events;
  int optimizations = 0;
};

namespace detail {

inline std::vector<Correspondence> match_by_id(const std::vector<LandmarkObservation>& source,
                                               const std::vector<LandmarkObservation>& target) {
  std::unordered_map<int, const Vec3*> by_id;
  by_id.reserve(target.size());
  for (const auto& o : target) by_id.emplace(o.landmark_id, &o.camera_point);
  std::vector<Correspondence> out;
  for (const auto& o : source) {
    if (auto it = by_id.find(o.landmark_id); it != by_id.end()) out.push_back({o.camera_point, *it->second});
  }
  return out;
}

inline std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return sim::detail::splitmix64(sim::detail::splitmix64(seed ^ a) ^ (b * 0x9E3779B97F4A7C15ull));
}

struct Snapshot {
  std::size_t node_count = 0;
  std::vector<Pose> nodes;
};

/// Runs pose-graph optimisation on snapshots on a dedicated thread. submit()
/// never blocks: a newer snapshot replaces a pending one.
class MappingWorker {
 public:
  MappingWorker(int max_iters, double tol) : max_iters_(max_iters), tol_(tol), thread_([this] { run(); }) {}
  ~MappingWorker() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    thread_.join();
  }

  void submit(PoseGraph g) {
    {
      std::lock_guard lk(mu_);
      pending_ = std::move(g);
    }
    cv_.notify_all();
  }

  std::optional<Snapshot> take_published() {
    std::lock_guard lk(mu_);
    auto out = std::move(published_);
    published_.reset();
    return out;
  }

  void drain() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return !pending_ && !busy_; });
  }

  int completed() const {
    std::lock_guard lk(mu_);
    return completed_;
  }

 private:
  void run() {
    std::unique_lock lk(mu_);
    for (;;) {
      cv_.wait(lk, [&] { return stop_ || pending_.has_value(); });
      if (stop_) return;
      PoseGraph g = std::move(*pending_);
      pending_.reset();
      busy_ = true;
      lk.unlock();
      std::optional<Snapshot> snap;
      try {
        auto r = optimize_pose_graph(g, max_iters_, tol_);
        snap = Snapshot{g.nodes.size(), std::move(r.nodes)};
      } catch (const Error&) {
        // An unsolvable snapshot publishes nothing; odometry keeps its chain.
      }
      lk.lock();
      if (snap) published_ = std::move(snap);
      busy_ = false;
      ++completed_;
      cv_.notify_all();
    }
  }

  int max_iters_;
  double tol_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<PoseGraph> pending_;
  std::optional<Snapshot> published_;
  bool busy_ = false;
  bool stop_ = false;
  int completed_ = 0;
  std::thread thread_;
};

}  // namespace detail

/// Streaming reconstruction. Feed frames in frame_id order with push(), then
/// call finish() once.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
    for (const auto& [a, b] : cfg_.loop_closures) {
      declared_[std::max(a, b)].push_back(std::min(a, b));
    }
    if (cfg_.async_mapping) worker_ = std::make_unique<detail::MappingWorker>(cfg_.graph_max_iters, cfg_.graph_tol);
  }

  void push(FrameInput frame) {
    if (!frames_.empty() && frame.frame_id <= frames_.back().frame_id)
      throw Error(ErrorCode::InvalidArgument, "frames must arrive in increasing frame_id order");
    if (worker_) adopt(worker_->take_published());

    const std::size_t node = frames_.size();
    if (node == 0) {
      const Pose start = frame.pose_hint.value_or(Pose::identity());
      graph_.add_node(start);
      odometry_.push_back(start);
    } else {
      add_odometry(frame);
    }
    index_[frame.frame_id] = node;
    frames_.push_back(std::move(frame));

    bool loop_added = add_loop_closures(node);
    ++since_optimize_;
    if (loop_added || (cfg_.optimize_every > 0 && since_optimize_ >= cfg_.optimize_every)) {
      since_optimize_ = 0;
      snapshot();
    }
  }

  PipelineResult finish() {
    if (worker_) {
      worker_->drain();
      adopt(worker_->take_published());
    }
    PipelineResult out;
    if (!frames_.empty() && !graph_.edges.empty()) {
      try {
        auto r = optimize_pose_graph(graph_, cfg_.graph_max_iters, cfg_.graph_tol);
        graph_.nodes = std::move(r.nodes);
        ++optimizations_;
      } catch (const Error& e) {
        events_.push_back({frames_.back().frame_id, "optimize-failed", e.what()});
      }
    }
    if (worker_) optimizations_ += worker_->completed();
    out.trajectory = graph_.nodes;
    out.odometry = odometry_;
    for (const auto& f : frames_) out.frame_ids.push_back(f.frame_id);

    std::optional<VoxelAccumulator> acc;
    if (cfg_.voxel > 0) acc.emplace(cfg_.voxel);
    for (std::size_t i = 0; i < frames_.size(); ++i) {
      if (!frames_[i].depth) continue;
      PointCloud c = depth_to_cloud(*frames_[i].depth, cfg_.intrinsics, graph_.nodes[i], cfg_.cloud_stride,
                                    cfg_.max_map_depth);
      if (acc) acc->add(c);
      else out.map.append(c);
    }
    if (acc) out.map = acc->cloud();
    out.graph = graph_;
    out.events = events_;
    out.optimizations = optimizations_;
    return out;
  }

  const PoseGraph& graph() const { return graph_; }

 private:
  void add_odometry(const FrameInput& frame) {
    const std::size_t node = frames_.size();
    const FrameInput& prev = frames_.back();
    Pose rel;
    double weight = cfg_.odometry_weight;
    try {
      // source: current camera points, target: previous camera points,
      // so the estimate is X_prev^-1 * X_cur.
      auto corr = detail::match_by_id(frame.observations, prev.observations);
      auto r = ransac_register(corr, cfg_.ransac, detail::frame_seed(cfg_.seed, prev.frame_id, frame.frame_id));
      rel = r.pose;
      last_rel_ = rel;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoConsensus) throw;
      rel = last_rel_;
      weight *= cfg_.fallback_weight_scale;
      events_.push_back({frame.frame_id, "odometry-fallback", e.what()});
    }
    graph_.add_node(compose(graph_.nodes[node - 1], rel));
    graph_.add_edge(node - 1, node, rel, weight);
    odometry_.push_back(compose(odometry_.back(), rel));
  }

  bool try_loop(std::size_t older, std::size_t newer, const char* kind) {
    auto corr = detail::match_by_id(frames_[newer].observations, frames_[older].observations);
    try {
      auto r = ransac_register(corr, cfg_.ransac,
                               detail::frame_seed(cfg_.seed, frames_[older].frame_id, frames_[newer].frame_id));
      graph_.add_edge(older, newer, r.pose, cfg_.loop_weight);
      events_.push_back({frames_[newer].frame_id, kind,
                         "linked to frame " + std::to_string(frames_[older].frame_id)});
      return true;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoConsensus) throw;
      events_.push_back({frames_[newer].frame_id, "loop-rejected", e.what()});
      return false;
    }
  }

  bool add_loop_closures(std::size_t node) {
    bool added = false;
    const std::uint64_t fid = frames_[node].frame_id;
    if (auto it = declared_.find(fid); it != declared_.end()) {
      for (std::uint64_t partner : it->second) {
        if (auto p = index_.find(partner); p != index_.end()) added |= try_loop(p->second, node, "loop-closure");
      }
    }
    if (cfg_.proximity_loops) {
      const Vec3 here = graph_.nodes[node].translation;
      for (std::size_t i = 0; i < node; ++i) {
        if (fid - frames_[i].frame_id <= cfg_.proximity_min_gap) break;
        if ((graph_.nodes[i].translation - here).norm() < cfg_.proximity_radius) {
          if (try_loop(i, node, "proximity-loop")) {
            added = true;
            break;
          }
        }
      }
    }
    return added;
  }

  void snapshot() {
    if (graph_.edges.empty()) return;
    if (worker_) {
      worker_->submit(graph_);
      return;
    }
    try {
      auto r = optimize_pose_graph(graph_, cfg_.graph_max_iters, cfg_.graph_tol);
      ++optimizations_;
      adopt(detail::Snapshot{graph_.nodes.size(), std::move(r.nodes)});
    } catch (const Error& e) {
      events_.push_back({frames_.back().frame_id, "optimize-failed", e.what()});
    }
  }

  /// Replace the first node_count poses with optimised ones and carry the
  /// nodes added since the snapshot along with the last snapshot node.
  void adopt(std::optional<detail::Snapshot> snap) {
    if (!snap || snap->node_count == 0) return;
    const std::size_t m = snap->node_count;
    const Pose correction = compose(snap->nodes[m - 1], graph_.nodes[m - 1].inverse());
    for (std::size_t k = m; k < graph_.nodes.size(); ++k) graph_.nodes[k] = compose(correction, graph_.nodes[k]);
    for (std::size_t k = 0; k < m; ++k) graph_.nodes[k] = snap->nodes[k];
  }

  PipelineConfig cfg_;
  PoseGraph graph_;
  std::vector<FrameInput> frames_;
  std::vector<Pose> odometry_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::map<std::uint64_t, std::vector<std::uint64_t>> declared_;
  std::vector<PipelineEvent> events_;
  Pose last_rel_;
  int since_optimize_ = 0;
  int optimizations_ = 0;
  std::unique_ptr<detail::MappingWorker> worker_;
};

inline PipelineResult run_pipeline(std::vector<FrameInput> frames, const PipelineConfig& cfg) {
  Pipeline p(cfg);
  for (auto& f : frames) p.push(std::move(f));
  return p.finish();
}

}  // namespace twinfuse::slam
