#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "purc/detail/parallel.hpp"
#include "purc/error.hpp"
#include "purc/network.hpp"
#include "purc/solver.hpp"
#include "purc/trip.hpp"

namespace purc {

/// Trips are drawn with std::mt19937_64 (fully specified by the standard, so
/// identical on every conforming library). Each (seed, od, trip) triple gets
/// its own engine, seeded through splitmix64, and uniforms are formed from the
/// top 53 bits. No std:: distribution is involved, since those are
/// implementation-defined.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t od, std::uint64_t trip) {
  return std::mt19937_64(splitmix64(splitmix64(splitmix64(seed) ^ od) ^ trip));
}

/// Uniform double in [0, 1).
inline double uniform(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

}  // namespace rng

struct SimulationPlan {
  std::vector<DemandSpec> ods;
  int trips_per_od = 1;
  Eigen::VectorXd beta;
  std::uint64_t seed = 0;
};

/// Random walk from origin to destination; at each node the next link is
/// drawn among active outgoing links with probability proportional to flow.
inline Trip sample_trip(const Network& net, const FlowSolution& sol, std::mt19937_64& g,
                        std::size_t max_steps = 0) {
  if (!sol.demand) throw ValidationError("cannot sample from a solution without demand");
  if (max_steps == 0) max_steps = 10 * net.num_links();
  Trip t;
  t.od = *sol.demand;
  NodeIndex v = t.od.origin;
  while (v != t.od.destination) {
    if (t.links.size() >= max_steps)
      throw NumericalError("random walk exceeded " + std::to_string(max_steps) + " steps");
    double total = 0.0;
    for (LinkIndex e : net.out_links(v))
      if (sol.active[static_cast<std::size_t>(e)]) total += sol.flows[e];
    if (!(total > 0.0))
      throw NumericalError("random walk reached node '" + net.nodes()[static_cast<std::size_t>(v)] +
                           "' with no active outgoing flow");
    const double target = rng::uniform(g) * total;
    LinkIndex pick = -1;
    double acc = 0.0;
    for (LinkIndex e : net.out_links(v)) {
      if (!sol.active[static_cast<std::size_t>(e)]) continue;
      pick = e;
      acc += sol.flows[e];
      if (target < acc) break;
    }
    t.links.push_back(pick);
    v = net.head(pick);
  }
  return t;
}

/// Solve each OD under plan.beta and draw trips_per_od trips from it. Output
/// is ordered by OD then trip and depends only on the plan, not on `jobs`.
inline std::vector<Trip> simulate_dataset(const Network& net, const SimulationPlan& plan,
                                          Perturbation pert, const SolverOptions& opts = {},
                                          unsigned jobs = 1) {
  if (plan.trips_per_od < 1) throw UsageError("trips_per_od must be at least 1");
  const UtilityRates u = link_utilities(net, plan.beta);
  std::map<DemandSpec, std::size_t> slot;
  std::vector<DemandSpec> unique;
  for (const auto& d : plan.ods)
    if (slot.try_emplace(d, unique.size()).second) unique.push_back(d);
  std::vector<FlowSolution> sols(unique.size());
  detail::parallel_for(unique.size(), jobs,
                       [&](std::size_t k) { sols[k] = solve_flow(net, u, unique[k], pert, opts); });

  const auto per = static_cast<std::size_t>(plan.trips_per_od);
  std::vector<Trip> trips(plan.ods.size() * per);
  detail::parallel_for(plan.ods.size(), jobs, [&](std::size_t k) {
    const FlowSolution& sol = sols[slot.at(plan.ods[k])];
    for (std::size_t i = 0; i < per; ++i) {
      auto g = rng::substream(plan.seed, k, i);
      trips[k * per + i] = sample_trip(net, sol, g);
    }
  });
  return trips;
}

struct SolutionStats {
  DemandSpec demand;
  std::size_t active_links = 0;
  double expected_time = 0.0;    // sum_e time_e x_e
  double expected_length = 0.0;  // sum_e l_e x_e
};

/// Per-OD summaries; `link_time` is the traversal time of each link (for
/// instance length times pace).
inline std::vector<SolutionStats> summarize_solution_stats(const Network& net,
                                                           std::span<const FlowSolution> sols,
                                                           const Eigen::VectorXd& link_time) {
  if (link_time.size() != static_cast<Eigen::Index>(net.num_links()))
    throw ValidationError("link time vector length does not match the link count");
  std::vector<SolutionStats> out;
  for (const auto& s : sols) {
    SolutionStats st;
    if (s.demand) st.demand = *s.demand;
    st.active_links = s.num_active();
    st.expected_time = link_time.dot(s.flows);
    st.expected_length = net.lengths().dot(s.flows);
    out.push_back(st);
  }
  return out;
}

inline void write_solution_stats_csv(std::ostream& os, const Network& net,
                                     std::span<const SolutionStats> stats) {
  os << "origin,destination,active_links,expected_time,expected_length_km\n";
  os.precision(17);
  for (const auto& s : stats)
    os << net.nodes()[static_cast<std::size_t>(s.demand.origin)] << ','
       << net.nodes()[static_cast<std::size_t>(s.demand.destination)] << ',' << s.active_links
       << ',' << s.expected_time << ',' << s.expected_length << '\n';
}

}  // namespace purc
