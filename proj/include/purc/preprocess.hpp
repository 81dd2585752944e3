#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "purc/detail/parallel.hpp"
#include "purc/error.hpp"
#include "purc/network.hpp"
#include "purc/solver.hpp"
#include "purc/trip.hpp"
#include "purc/validation.hpp"

namespace purc {

enum class TrimDirection { kOrigin, kDestination };

/// Greedy node selection, one step per chosen node.
struct TrimSelection {
  std::vector<NodeIndex> nodes;      // in selection order
  std::vector<long long> scores;     // S_v of each chosen node when chosen
  std::vector<long long> remaining;  // total score sum_t sum_k (k*_t - k) after each step
};

/// Choose `n` nodes so that trips can start (or end) in a compact set.
///
/// With k*_t the position of the first chosen node in trip t (initially its
/// length), every node at position k scores k*_t - k, node scores sum over the
/// trips through them, and the best unchosen node is added. A node visited
/// twice in one trip scores at its first visit. Ties go to the smaller node
/// index. The destination direction runs on reversed sequences.
inline TrimSelection select_trim_nodes(std::span<const std::vector<NodeIndex>> sequences,
                                       std::size_t n, TrimDirection dir, std::size_t num_nodes) {
  if (n == 0) throw UsageError("number of trim nodes must be at least 1");
  std::vector<std::vector<NodeIndex>> seqs(sequences.begin(), sequences.end());
  if (dir == TrimDirection::kDestination)
    for (auto& s : seqs) std::reverse(s.begin(), s.end());

  // first[t]: (node, 1-based first position) pairs of trip t.
  std::vector<std::vector<std::pair<NodeIndex, long long>>> first(seqs.size());
  std::vector<char> seen(num_nodes, 0);
  std::size_t eligible = 0;
  for (std::size_t t = 0; t < seqs.size(); ++t) {
    std::set<NodeIndex> in_trip;
    for (std::size_t k = 0; k < seqs[t].size(); ++k) {
      const NodeIndex v = seqs[t][k];
      if (v < 0 || static_cast<std::size_t>(v) >= num_nodes)
        throw ValidationError("trip refers to a node outside the network");
      if (in_trip.insert(v).second) first[t].emplace_back(v, static_cast<long long>(k) + 1);
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        ++eligible;
      }
    }
  }
  if (n > eligible)
    throw ValidationError("asked for " + std::to_string(n) + " trim nodes but trips visit only " +
                          std::to_string(eligible));

  std::vector<long long> kstar(seqs.size());
  for (std::size_t t = 0; t < seqs.size(); ++t) kstar[t] = static_cast<long long>(seqs[t].size());
  std::vector<char> chosen(num_nodes, 0);
  std::vector<long long> score(num_nodes);
  TrimSelection out;
  while (out.nodes.size() < n) {
    std::fill(score.begin(), score.end(), 0);
    for (std::size_t t = 0; t < seqs.size(); ++t)
      for (const auto& [v, k] : first[t]) score[static_cast<std::size_t>(v)] += kstar[t] - k;
    NodeIndex best = -1;
    for (std::size_t v = 0; v < num_nodes; ++v) {
      if (!seen[v] || chosen[v]) continue;
      if (best < 0 || score[v] > score[static_cast<std::size_t>(best)]) best = static_cast<NodeIndex>(v);
    }
    chosen[static_cast<std::size_t>(best)] = 1;
    out.nodes.push_back(best);
    out.scores.push_back(score[static_cast<std::size_t>(best)]);
    long long total = 0;
    for (std::size_t t = 0; t < seqs.size(); ++t) {
      for (const auto& [v, k] : first[t])
        if (v == best) kstar[t] = std::min(kstar[t], k);
      for (const auto& [v, k] : first[t]) total += kstar[t] - k;
    }
    out.remaining.push_back(total);
  }
  return out;
}

inline TrimSelection select_trim_nodes(const Network& net, std::span<const Trip> trips,
                                       std::size_t n, TrimDirection dir) {
  if (trips.empty()) throw ValidationError("no trips to select trim nodes from");
  std::vector<std::vector<NodeIndex>> seqs;
  seqs.reserve(trips.size());
  for (const Trip& t : trips) seqs.push_back(trip_nodes(net, t));
  return select_trim_nodes(seqs, n, dir, net.num_nodes());
}

struct TrimResult {
  std::vector<NodeIndex> origins;
  std::vector<NodeIndex> destinations;
  std::vector<Trip> kept;
  std::vector<std::size_t> kept_index;  // input position of each kept trip
  std::size_t discarded = 0;
};

/// Cut each trip to start at its first visit to an origin node and end at its
/// last visit to a destination node. Trips where that order fails, or that
/// miss either set, are discarded.
inline TrimResult trim_trips(const Network& net, std::span<const Trip> trips,
                             const std::vector<NodeIndex>& origins,
                             const std::vector<NodeIndex>& destinations) {
  if (origins.empty() || destinations.empty()) throw UsageError("trim node sets must be nonempty");
  std::vector<char> in_o(net.num_nodes(), 0), in_d(net.num_nodes(), 0);
  for (NodeIndex v : origins) in_o.at(static_cast<std::size_t>(v)) = 1;
  for (NodeIndex v : destinations) in_d.at(static_cast<std::size_t>(v)) = 1;
  TrimResult r;
  r.origins = origins;
  r.destinations = destinations;
  for (std::size_t i = 0; i < trips.size(); ++i) {
    const auto nodes = trip_nodes(net, trips[i]);
    std::size_t a = nodes.size(), b = nodes.size();
    for (std::size_t k = 0; k < nodes.size(); ++k)
      if (in_o[static_cast<std::size_t>(nodes[k])]) {
        a = k;
        break;
      }
    for (std::size_t k = nodes.size(); k-- > 0;)
      if (in_d[static_cast<std::size_t>(nodes[k])]) {
        b = k;
        break;
      }
    // a < b; a trimmed trip that starts and ends at the same node is a loop
    // with no OD and is discarded as well.
    if (a >= nodes.size() || b >= nodes.size() || a >= b || nodes[a] == nodes[b]) {
      ++r.discarded;
      continue;
    }
    Trip t;
    t.od = {nodes[a], nodes[b]};
    t.links.assign(trips[i].links.begin() + static_cast<std::ptrdiff_t>(a),
                   trips[i].links.begin() + static_cast<std::ptrdiff_t>(b));
    r.kept.push_back(std::move(t));
    r.kept_index.push_back(i);
  }
  return r;
}

struct FilterResult {
  std::vector<Trip> kept;
  std::vector<Trip> discarded;
  std::vector<double> coverage;  // per input trip: |utility| share inside the active set
};

/// Keep trips with at least `threshold` of their |utility| on links the
/// screening model predicts as active for their OD.
inline FilterResult filter_nonsensical(const Network& net, std::span<const Trip> trips,
                                       const Eigen::VectorXd& screen_beta, double threshold,
                                       Perturbation pert, const SolverOptions& opts = {},
                                       unsigned jobs = 1) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw UsageError("coverage threshold must lie in [0, 1]");
  const UtilityRates u = link_utilities(net, screen_beta);
  std::map<DemandSpec, std::size_t> slot;
  std::vector<DemandSpec> ods;
  for (const Trip& t : trips) {
    check_trip(net, t);
    if (slot.try_emplace(t.od, ods.size()).second) ods.push_back(t.od);
  }
  std::vector<FlowSolution> sols(ods.size());
  detail::parallel_for(ods.size(), jobs,
                       [&](std::size_t k) { sols[k] = solve_flow(net, u, ods[k], pert, opts); });
  FilterResult r;
  for (const Trip& t : trips) {
    const double cover = 1.0 - outside_utility_share(net, t, sols[slot.at(t.od)].active, u);
    r.coverage.push_back(cover);
    (cover >= threshold ? r.kept : r.discarded).push_back(t);
  }
  return r;
}

struct OdFilterResult {
  std::vector<Trip> kept;
  std::vector<DemandSpec> dropped_ods;
  std::size_t dropped_trips = 0;
};

/// Remove ODs whose trips all use the same set of links (including ODs with a
/// single trip). Kept trips retain their input order.
inline OdFilterResult drop_degenerate_ods(std::span<const Trip> trips) {
  std::map<DemandSpec, std::vector<std::set<LinkIndex>>> sets;
  for (const Trip& t : trips) sets[t.od].emplace_back(t.links.begin(), t.links.end());
  std::set<DemandSpec> drop;
  for (const auto& [od, s] : sets)
    if (std::all_of(s.begin(), s.end(), [&](const auto& x) { return x == s.front(); }))
      drop.insert(od);
  OdFilterResult r;
  r.dropped_ods.assign(drop.begin(), drop.end());
  for (const Trip& t : trips) {
    if (drop.count(t.od))
      ++r.dropped_trips;
    else
      r.kept.push_back(t);
  }
  return r;
}

}  // namespace purc
