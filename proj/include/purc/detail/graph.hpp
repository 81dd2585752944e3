#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "purc/error.hpp"
#include "purc/network.hpp"

namespace purc::detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Dijkstra with nonnegative link costs. Returns the link sequence from origin
/// to destination, or an empty vector when the destination is unreachable.
inline std::vector<LinkIndex> shortest_path(const Network& net, const Eigen::VectorXd& cost,
                                            NodeIndex origin, NodeIndex destination) {
  const auto n = net.num_nodes();
  std::vector<double> dist(n, kInf);
  std::vector<LinkIndex> pred(n, -1);
  using Item = std::pair<double, NodeIndex>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[static_cast<std::size_t>(origin)] = 0.0;
  heap.emplace(0.0, origin);
  while (!heap.empty()) {
    auto [d, v] = heap.top();
    heap.pop();
    if (d > dist[static_cast<std::size_t>(v)]) continue;
    if (v == destination) break;
    for (LinkIndex e : net.out_links(v)) {
      const NodeIndex w = net.head(e);
      const double nd = d + cost[e];
      if (nd < dist[static_cast<std::size_t>(w)]) {
        dist[static_cast<std::size_t>(w)] = nd;
        pred[static_cast<std::size_t>(w)] = e;
        heap.emplace(nd, w);
      }
    }
  }
  std::vector<LinkIndex> path;
  if (dist[static_cast<std::size_t>(destination)] == kInf) return path;
  for (NodeIndex v = destination; v != origin;) {
    const LinkIndex e = pred[static_cast<std::size_t>(v)];
    path.push_back(e);
    v = net.tail(e);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

/// Multi-source Dijkstra: pot[v] = min_w (start[w] + dist(w, v)) over nodes w
/// with a finite start value. Seed nodes keep their start value; nodes not
/// reachable from any seed keep +inf.
inline std::vector<double> extend_potentials(const Network& net, const Eigen::VectorXd& cost,
                                             std::vector<double> start) {
  std::vector<char> fixed(start.size(), 0);
  for (std::size_t v = 0; v < start.size(); ++v) fixed[v] = start[v] < kInf;
  using Item = std::pair<double, NodeIndex>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (std::size_t v = 0; v < start.size(); ++v)
    if (start[v] < kInf) heap.emplace(start[v], static_cast<NodeIndex>(v));
  while (!heap.empty()) {
    auto [d, v] = heap.top();
    heap.pop();
    if (d > start[static_cast<std::size_t>(v)]) continue;
    for (LinkIndex e : net.out_links(v)) {
      const NodeIndex w = net.head(e);
      const double nd = d + cost[e];
      if (!fixed[static_cast<std::size_t>(w)] && nd < start[static_cast<std::size_t>(w)]) {
        start[static_cast<std::size_t>(w)] = nd;
        heap.emplace(nd, w);
      }
    }
  }
  return start;
}

inline bool reachable(const Network& net, NodeIndex origin, NodeIndex destination) {
  std::vector<char> seen(net.num_nodes(), 0);
  std::vector<NodeIndex> stack{origin};
  seen[static_cast<std::size_t>(origin)] = 1;
  while (!stack.empty()) {
    const NodeIndex v = stack.back();
    stack.pop_back();
    if (v == destination) return true;
    for (LinkIndex e : net.out_links(v)) {
      const NodeIndex w = net.head(e);
      if (!seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = 1;
        stack.push_back(w);
      }
    }
  }
  return false;
}

/// Solves the weighted graph Laplacian system (A_S W A_S^T) nu = rhs over the
/// nodes touched by `links`. The Laplacian is singular once per connected
/// component; the smallest node of each component is grounded at nu = 0.
/// Untouched nodes receive 0.
class GroundedLaplacian {
 public:
  GroundedLaplacian(const Network& net, std::span<const LinkIndex> links,
                    std::span<const double> weights)
      : net_(&net), slot_(net.num_nodes(), -1) {
    const std::size_t n = net.num_nodes();
    std::vector<NodeIndex> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<NodeIndex(NodeIndex)> find = [&](NodeIndex v) {
      while (parent[static_cast<std::size_t>(v)] != v) {
        parent[static_cast<std::size_t>(v)] =
            parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(v)])];
        v = parent[static_cast<std::size_t>(v)];
      }
      return v;
    };
    std::vector<char> touched(n, 0);
    for (LinkIndex e : links) {
      const NodeIndex a = net.tail(e), b = net.head(e);
      touched[static_cast<std::size_t>(a)] = touched[static_cast<std::size_t>(b)] = 1;
      const NodeIndex ra = find(a), rb = find(b);
      if (ra != rb) parent[static_cast<std::size_t>(std::max(ra, rb))] = std::min(ra, rb);
    }
    // Roots are the smallest node of each component; they are grounded.
    Eigen::Index k = 0;
    for (std::size_t v = 0; v < n; ++v)
      if (touched[v] && find(static_cast<NodeIndex>(v)) != static_cast<NodeIndex>(v))
        slot_[v] = k++;
    size_ = k;
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(4 * links.size());
    for (std::size_t i = 0; i < links.size(); ++i) {
      const Eigen::Index a = slot_[static_cast<std::size_t>(net.tail(links[i]))];
      const Eigen::Index b = slot_[static_cast<std::size_t>(net.head(links[i]))];
      const double w = weights[i];
      if (a >= 0) t.emplace_back(a, a, w);
      if (b >= 0) t.emplace_back(b, b, w);
      if (a >= 0 && b >= 0) {
        t.emplace_back(a, b, -w);
        t.emplace_back(b, a, -w);
      }
    }
    Eigen::SparseMatrix<double> lap(size_, size_);
    lap.setFromTriplets(t.begin(), t.end());
    if (size_ > 0) {
      ldlt_.compute(lap);
      if (ldlt_.info() != Eigen::Success)
        throw NumericalError("graph Laplacian factorization failed");
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net_->num_nodes()));
    if (size_ == 0) return nu;
    Eigen::VectorXd r(size_);
    for (std::size_t v = 0; v < slot_.size(); ++v)
      if (slot_[v] >= 0) r[slot_[v]] = rhs[static_cast<Eigen::Index>(v)];
    const Eigen::VectorXd s = ldlt_.solve(r);
    for (std::size_t v = 0; v < slot_.size(); ++v)
      if (slot_[v] >= 0) nu[static_cast<Eigen::Index>(v)] = s[slot_[v]];
    return nu;
  }

 private:
  const Network* net_;
  std::vector<Eigen::Index> slot_;
  Eigen::Index size_ = 0;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
};

/// Node balance A x.
inline Eigen::VectorXd node_balance(const Network& net, const Eigen::VectorXd& x) {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_nodes()));
  for (LinkIndex e = 0; e < static_cast<LinkIndex>(net.num_links()); ++e) {
    r[net.tail(e)] -= x[e];
    r[net.head(e)] += x[e];
  }
  return r;
}

}  // namespace purc::detail
