#pragma once

// SE(3) pose-graph optimisation by Gauss-Newton.
//
// Edge residual: r_ij = log(Z_ij^-1 * X_i^-1 * X_j), cost = sum w_ij |r_ij|^2.
// Node 0 is the gauge anchor and never moves. Updates are left-multiplicative,
// X <- exp(delta) * X.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cstdint>
#include <queue>
#include <vector>

#include "twinfuse/geometry.hpp"
#include "twinfuse/se3.hpp"

namespace twinfuse::slam {

struct PoseEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  Pose relative;  // measured X_from^-1 * X_to
  double weight = 1.0;
};

struct PoseGraph {
  std::vector<Pose> nodes;
  std::vector<PoseEdge> edges;

  std::size_t add_node(const Pose& p) {
    nodes.push_back(p);
    return nodes.size() - 1;
  }
  void add_edge(std::size_t from, std::size_t to, const Pose& relative, double weight = 1.0) {
    edges.push_back(PoseEdge{from, to, relative, weight});
  }

  void validate() const {
    for (const auto& e : edges) {
      if (e.from >= nodes.size() || e.to >= nodes.size())
        throw Error(ErrorCode::InvalidArgument, "edge endpoint out of range");
      if (!(e.weight > 0)) throw Error(ErrorCode::InvalidArgument, "edge weight must be > 0");
    }
  }

  bool connected() const {
    if (nodes.empty()) return true;
    std::vector<std::vector<std::size_t>> adj(nodes.size());
    for (const auto& e : edges) {
      adj[e.from].push_back(e.to);
      adj[e.to].push_back(e.from);
    }
    std::vector<bool> seen(nodes.size(), false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    std::size_t visited = 1;
    while (!q.empty()) {
      const std::size_t n = q.front();
      q.pop();
      for (std::size_t m : adj[n]) {
        if (!seen[m]) {
          seen[m] = true;
          ++visited;
          q.push(m);
        }
      }
    }
    return visited == nodes.size();
  }
};

struct EdgeLinearization {
  se3::Vec6 residual;
  se3::Mat6 jac_from;  // d r / d delta_from
  se3::Mat6 jac_to;    // d r / d delta_to
};

inline se3::Vec6 edge_residual(const Pose& xi, const Pose& xj, const Pose& z) {
  return se3::log(compose(compose(z.inverse(), xi.inverse()), xj));
}

/// Residual plus analytic Jacobians with respect to left perturbations of
/// both endpoints:  dr/d(delta_j) = J_l^-1(r) Ad(Z^-1 X_i^-1),  dr/d(delta_i) = -dr/d(delta_j).
inline EdgeLinearization linearize_edge(const Pose& xi, const Pose& xj, const Pose& z) {
  const Pose a = compose(z.inverse(), xi.inverse());
  EdgeLinearization lin;
  lin.residual = se3::log(compose(a, xj));
  lin.jac_to = se3::left_jacobian_inverse(lin.residual) * se3::adjoint(a);
  lin.jac_from = -lin.jac_to;
  return lin;
}

inline double graph_cost(const PoseGraph& g) {
  double cost = 0.0;
  for (const auto& e : g.edges)
    cost += e.weight * edge_residual(g.nodes[e.from], g.nodes[e.to], e.relative).squaredNorm();
  return cost;
}

struct OptimizeResult {
  std::vector<Pose> nodes;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
};

/// Gauss-Newton with step halving: a step is accepted only if it lowers the
/// cost, so the cost sequence over accepted iterations is non-increasing.
/// Stops when the decrease of an accepted step falls below `tol` or after
/// `max_iters` iterations.
inline OptimizeResult optimize_pose_graph(const PoseGraph& g, int max_iters = 20, double tol = 1e-12) {
  g.validate();
  if (!g.connected()) throw Error(ErrorCode::DisconnectedGraph, "pose graph is not connected");
  OptimizeResult res;
  res.nodes = g.nodes;
  res.initial_cost = graph_cost(g);
  res.final_cost = res.initial_cost;
  const std::size_t free_nodes = g.nodes.empty() ? 0 : g.nodes.size() - 1;
  if (free_nodes == 0 || g.edges.empty()) return res;

  const auto dim = static_cast<Eigen::Index>(6 * free_nodes);
  PoseGraph work = g;
  double cost = res.initial_cost;

  for (int it = 0; it < max_iters; ++it) {
    if (cost == 0.0) break;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(g.edges.size() * 4 * 36);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
    for (const auto& e : work.edges) {
      const auto lin = linearize_edge(work.nodes[e.from], work.nodes[e.to], e.relative);
      const std::size_t ids[2] = {e.from, e.to};
      const se3::Mat6* jacs[2] = {&lin.jac_from, &lin.jac_to};
      for (int p = 0; p < 2; ++p) {
        if (ids[p] == 0) continue;
        const auto rp = static_cast<Eigen::Index>(6 * (ids[p] - 1));
        b.segment<6>(rp) += e.weight * jacs[p]->transpose() * lin.residual;
        for (int q = 0; q < 2; ++q) {
          if (ids[q] == 0) continue;
          const auto cq = static_cast<Eigen::Index>(6 * (ids[q] - 1));
          const se3::Mat6 block = e.weight * jacs[p]->transpose() * (*jacs[q]);
          for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c) trip.emplace_back(rp + r, cq + c, block(r, c));
        }
      }
    }
    Eigen::SparseMatrix<double> h(dim, dim);
    h.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(h);
    if (solver.info() != Eigen::Success || (solver.vectorD().array() <= 1e-14 * std::max(1.0, solver.vectorD().cwiseAbs().maxCoeff())).any()) {
      throw Error(ErrorCode::SingularNormalEquations, "normal equations are singular");
    }
    const Eigen::VectorXd delta = solver.solve(-b);
    if (solver.info() != Eigen::Success || !delta.allFinite())
      throw Error(ErrorCode::SingularNormalEquations, "linear solve failed");

    bool accepted = false;
    double step = 1.0;
    PoseGraph trial = work;
    double trial_cost = cost;
    for (int halving = 0; halving < 10; ++halving, step *= 0.5) {
      for (std::size_t n = 1; n < work.nodes.size(); ++n) {
        const se3::Vec6 d = step * delta.segment<6>(static_cast<Eigen::Index>(6 * (n - 1)));
        trial.nodes[n] = compose(se3::exp(d), work.nodes[n]);
      }
      trial_cost = graph_cost(trial);
      if (trial_cost < cost) {
        accepted = true;
        break;
      }
    }
    ++res.iterations;
    if (!accepted) break;
    const double decrease = cost - trial_cost;
    work.nodes.swap(trial.nodes);
    cost = trial_cost;
    if (decrease < tol) break;
  }
  res.nodes = std::move(work.nodes);
  res.final_cost = cost;
  return res;
}

}  // namespace twinfuse::slam
