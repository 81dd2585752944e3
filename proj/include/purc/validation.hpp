#pragma once

#include <Eigen/Core>

#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "purc/detail/parallel.hpp"
#include "purc/error.hpp"
#include "purc/network.hpp"
#include "purc/solver.hpp"
#include "purc/trip.hpp"

namespace purc {

/// Share of the trip's |utility| (l_e |u_e| per traversal) on links outside
/// the active set. 0 means the trip lies entirely inside it.
inline double outside_utility_share(const Network& net, const Trip& t,
                                    const std::vector<char>& active, const UtilityRates& u) {
  double outside = 0.0, total = 0.0;
  for (LinkIndex e : t.links) {
    const double w = net.length(e) * std::abs(u[e]);
    total += w;
    if (!active[static_cast<std::size_t>(e)]) outside += w;
  }
  if (!(total > 0.0)) throw ValidationError("trip carries no utility");
  return outside / total;
}

/// Per-link predicted totals: sum over ODs of trip_count times unit flow.
inline Eigen::VectorXd aggregate_predicted_flows(const Network& net, std::span<const FlowSolution> sols,
                                                 std::span<const long long> counts) {
  if (sols.size() != counts.size()) throw ValidationError("one trip count per solution expected");
  Eigen::VectorXd total = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_links()));
  for (std::size_t k = 0; k < sols.size(); ++k)
    total += static_cast<double>(counts[k]) * sols[k].flows;
  return total;
}

/// Solve every OD under beta and aggregate. Solves run on `jobs` threads; the
/// sum is taken in input order.
inline Eigen::VectorXd aggregate_predicted_flows(const Network& net, const Eigen::VectorXd& beta,
                                                 std::span<const DemandRow> demands,
                                                 Perturbation pert, const SolverOptions& opts = {},
                                                 unsigned jobs = 1) {
  const UtilityRates u = link_utilities(net, beta);
  std::vector<FlowSolution> sols(demands.size());
  std::vector<long long> counts(demands.size());
  detail::parallel_for(demands.size(), jobs, [&](std::size_t k) {
    counts[k] = demands[k].trip_count;
    sols[k] = counts[k] == 0 ? zero_flow_solution(net) : solve_flow(net, u, demands[k].od, pert, opts);
  });
  return aggregate_predicted_flows(net, sols, counts);
}

/// Link traversal counts over all trips.
inline Eigen::VectorXd observed_link_totals(const Network& net, std::span<const Trip> trips) {
  Eigen::VectorXd total = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_links()));
  for (const Trip& t : trips)
    for (LinkIndex e : t.links) total[e] += 1.0;
  return total;
}

struct AdjustedR2 {
  double value = 0.0;        // 1 - (SSE/SST)(N-1)/(N-p-1)
  double alternative = 0.0;  // 1 - (1 - SSE/SST)(1-N)/(1-p-N)
  double sse = 0.0;
  double sst = 0.0;
  bool divergent = false;  // the two disagree by more than 1e-9
};

/// Adjusted R^2 between observed and predicted link totals with p estimated
/// parameters. Also returns an alternative arrangement of the same terms,
/// which differs (it gives about 0 for a perfect fit).
inline AdjustedR2 prediction_adj_r2(const Eigen::VectorXd& observed, const Eigen::VectorXd& predicted,
                                    int p) {
  const auto n = observed.size();
  if (predicted.size() != n) throw ValidationError("observed and predicted lengths differ");
  if (p < 0 || n <= p + 1) throw ValidationError("need more observations than parameters + 1");
  AdjustedR2 r;
  r.sse = (predicted - observed).squaredNorm();
  r.sst = (observed.array() - observed.mean()).square().sum();
  if (!(r.sst > 0.0)) throw ValidationError("observed flows are constant; R^2 undefined");
  const double nn = static_cast<double>(n), pp = static_cast<double>(p);
  const double ratio = r.sse / r.sst;
  r.value = 1.0 - ratio * (nn - 1.0) / (nn - pp - 1.0);
  r.alternative = 1.0 - (1.0 - ratio) * (1.0 - nn) / (1.0 - pp - nn);
  r.divergent = std::abs(r.value - r.alternative) > 1e-9;
  return r;
}

struct UnusedLinkStats {
  std::size_t predicted_unused = 0;
  std::size_t observed_unused = 0;
  std::size_t both_unused = 0;
  double jaccard = 1.0;             // |P & O| / |P | O|
  double share_of_predicted = 1.0;  // |P & O| / |P|
  double share_of_observed = 1.0;   // |P & O| / |O|
  double predicted_unused_km = 0.0;
  double observed_unused_km = 0.0;
};

/// Compare the sets of links with zero predicted and zero observed totals.
/// Empty denominators give 1 (the sets agree vacuously).
inline UnusedLinkStats unused_link_stats(const Eigen::VectorXd& predicted,
                                         const Eigen::VectorXd& observed, const Network& net) {
  const auto m = static_cast<Eigen::Index>(net.num_links());
  if (predicted.size() != m || observed.size() != m)
    throw ValidationError("link totals do not match the link count");
  UnusedLinkStats s;
  std::size_t either = 0;
  for (Eigen::Index e = 0; e < m; ++e) {
    const bool p = predicted[e] == 0.0, o = observed[e] == 0.0;
    s.predicted_unused += p;
    s.observed_unused += o;
    s.both_unused += p && o;
    either += p || o;
    if (p) s.predicted_unused_km += net.length(static_cast<LinkIndex>(e));
    if (o) s.observed_unused_km += net.length(static_cast<LinkIndex>(e));
  }
  auto frac = [&](std::size_t den) {
    return den ? static_cast<double>(s.both_unused) / static_cast<double>(den) : 1.0;
  };
  s.jaccard = frac(either);
  s.share_of_predicted = frac(s.predicted_unused);
  s.share_of_observed = frac(s.observed_unused);
  return s;
}

struct ValidationReport {
  Eigen::VectorXd observed;   // per link
  Eigen::VectorXd predicted;  // per link
  AdjustedR2 adj_r2;
  std::vector<double> outside_shares;  // per trip, input order
  double fully_covered = 0.0;          // share of trips with outside share 0
  UnusedLinkStats unused;
  std::size_t num_ods = 0;
};

/// Predict every observed OD under beta and compare with the trips.
inline ValidationReport validate(const Network& net, const Eigen::VectorXd& beta,
                                 std::span<const Trip> trips, Perturbation pert,
                                 const SolverOptions& opts = {}, unsigned jobs = 1) {
  if (trips.empty()) throw ValidationError("no trips to validate against");
  const UtilityRates u = link_utilities(net, beta);
  std::map<DemandSpec, std::size_t> slot;
  std::vector<DemandSpec> ods;
  std::vector<long long> counts;
  for (const Trip& t : trips) {
    check_trip(net, t);
    auto [it, fresh] = slot.try_emplace(t.od, ods.size());
    if (fresh) {
      ods.push_back(t.od);
      counts.push_back(0);
    }
    ++counts[it->second];
  }
  std::vector<FlowSolution> sols(ods.size());
  detail::parallel_for(ods.size(), jobs,
                       [&](std::size_t k) { sols[k] = solve_flow(net, u, ods[k], pert, opts); });
  ValidationReport r;
  r.num_ods = ods.size();
  r.observed = observed_link_totals(net, trips);
  r.predicted = aggregate_predicted_flows(net, sols, counts);
  r.adj_r2 = prediction_adj_r2(r.observed, r.predicted, static_cast<int>(beta.size()));
  std::size_t covered = 0;
  for (const Trip& t : trips) {
    const double s = outside_utility_share(net, t, sols[slot.at(t.od)].active, u);
    r.outside_shares.push_back(s);
    covered += s == 0.0;
  }
  r.fully_covered = static_cast<double>(covered) / static_cast<double>(trips.size());
  r.unused = unused_link_stats(r.predicted, r.observed, net);
  return r;
}

}  // namespace purc
