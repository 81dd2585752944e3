#pragma once

#include <Eigen/Core>
#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "purc/detail/graph.hpp"
#include "purc/error.hpp"
#include "purc/network.hpp"

namespace purc {

/// Enumerated loop-free routes for one OD with U_n = sum_{e in n} l_e u_e.
struct RouteSet {
  DemandSpec demand;
  std::vector<std::vector<LinkIndex>> routes;
  Eigen::VectorXd utility;       // U_n
  Eigen::VectorXd length;        // L_n, km
  Eigen::VectorXd link_lengths;  // l_e for every network link
};

/// All routes that visit no node twice, by depth-first search. Throws once
/// more than `max_routes` are found; the baselines are for small networks.
inline RouteSet enumerate_routes(const Network& net, const UtilityRates& u, const DemandSpec& d,
                                 std::size_t max_routes = 10000) {
  check_demand(net, d);
  if (!detail::reachable(net, d.origin, d.destination))
    throw InfeasibleError("destination '" + net.nodes()[static_cast<std::size_t>(d.destination)] +
                          "' is unreachable");
  RouteSet rs;
  rs.demand = d;
  rs.link_lengths = net.lengths();
  std::vector<char> on_path(net.num_nodes(), 0);
  std::vector<LinkIndex> path;
  auto dfs = [&](auto&& self, NodeIndex v) -> void {
    if (v == d.destination) {
      if (rs.routes.size() == max_routes)
        throw UsageError("more than " + std::to_string(max_routes) +
                         " loop-free routes; route enumeration is for small networks");
      rs.routes.push_back(path);
      return;
    }
    on_path[static_cast<std::size_t>(v)] = 1;
    for (LinkIndex e : net.out_links(v)) {
      const NodeIndex w = net.head(e);
      if (on_path[static_cast<std::size_t>(w)]) continue;
      path.push_back(e);
      self(self, w);
      path.pop_back();
    }
    on_path[static_cast<std::size_t>(v)] = 0;
  };
  dfs(dfs, d.origin);
  const auto n = static_cast<Eigen::Index>(rs.routes.size());
  rs.utility.resize(n);
  rs.length.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    double util = 0.0, len = 0.0;
    for (LinkIndex e : rs.routes[static_cast<std::size_t>(k)]) {
      util += net.length(e) * u[e];
      len += net.length(e);
    }
    rs.utility[k] = util;
    rs.length[k] = len;
  }
  return rs;
}

struct ChoiceProbabilities {
  Eigen::VectorXd route;  // P_n
  Eigen::VectorXd link;   // sum of P_n over routes using the link
};

namespace detail {

inline ChoiceProbabilities logit(const RouteSet& rs, const Eigen::VectorXd& v) {
  if (v.size() == 0) throw ValidationError("empty route set");
  ChoiceProbabilities p;
  p.route = (v.array() - v.maxCoeff()).exp();
  p.route /= p.route.sum();
  p.link = Eigen::VectorXd::Zero(rs.link_lengths.size());
  for (std::size_t k = 0; k < rs.routes.size(); ++k)
    for (LinkIndex e : rs.routes[k]) p.link[e] += p.route[static_cast<Eigen::Index>(k)];
  return p;
}

}  // namespace detail

/// V_n = beta_u U_n.
inline ChoiceProbabilities mnl_probabilities(const RouteSet& rs, double beta_u) {
  return detail::logit(rs, beta_u * rs.utility);
}

/// Path size S_n = sum_{e in n} (l_e / L_n) (1 / N_e), N_e the number of
/// routes in the set that use link e.
inline Eigen::VectorXd path_size(const RouteSet& rs) {
  std::vector<int> uses(static_cast<std::size_t>(rs.link_lengths.size()), 0);
  for (const auto& r : rs.routes)
    for (LinkIndex e : r) ++uses[static_cast<std::size_t>(e)];
  Eigen::VectorXd s(static_cast<Eigen::Index>(rs.routes.size()));
  for (std::size_t k = 0; k < rs.routes.size(); ++k) {
    double acc = 0.0;
    for (LinkIndex e : rs.routes[k])
      acc += rs.link_lengths[e] / uses[static_cast<std::size_t>(e)];
    s[static_cast<Eigen::Index>(k)] = acc / rs.length[static_cast<Eigen::Index>(k)];
  }
  return s;
}

/// V_n = beta_u U_n + beta_ps ln S_n.
inline ChoiceProbabilities psl_probabilities(const RouteSet& rs, double beta_u, double beta_ps) {
  return detail::logit(rs, beta_u * rs.utility + beta_ps * path_size(rs).array().log().matrix());
}

enum class BaselineModel { kMNL, kPSL };

inline BaselineModel parse_baseline_model(const std::string& s) {
  if (s == "mnl") return BaselineModel::kMNL;
  if (s == "psl") return BaselineModel::kPSL;
  throw UsageError("unknown baseline model '" + s + "' (mnl, psl)");
}

struct CalibrationOptions {
  bool joint = false;  // PSL: 2-D search instead of beta_u from MNL then beta_ps
  double beta_u_lo = 1e-3, beta_u_hi = 20.0;
  double beta_ps_lo = -10.0, beta_ps_hi = 10.0;
  int bits = 40;
  std::uintmax_t max_iter = 200;
};

struct Calibration {
  double beta_u = 0.0;
  double beta_ps = 0.0;
  double sse = 0.0;  // sum over links of squared flow errors
};

namespace detail {

template <class F>
std::pair<double, double> brent(F f, double lo, double hi, const CalibrationOptions& o) {
  std::uintmax_t iters = o.max_iter;
  auto r = boost::math::tools::brent_find_minima(f, lo, hi, o.bits, iters);
  if (iters >= o.max_iter)
    throw ConvergenceError("calibration search did not converge", r.second);
  return r;
}

}  // namespace detail

/// Least squares over link flows. MNL fits beta_u; PSL by default takes
/// beta_u from the MNL fit and searches beta_ps alone (see `joint`).
inline Calibration calibrate_to_flows(BaselineModel model, const RouteSet& rs,
                                      const Eigen::VectorXd& target,
                                      const CalibrationOptions& opts = {}) {
  if (target.size() != rs.link_lengths.size())
    throw ValidationError("target flow length does not match the link count");
  auto sse = [&](const ChoiceProbabilities& p) { return (p.link - target).squaredNorm(); };
  auto mnl_sse = [&](double bu) { return sse(mnl_probabilities(rs, bu)); };
  Calibration out;
  auto [bu, err] = detail::brent(mnl_sse, opts.beta_u_lo, opts.beta_u_hi, opts);
  out.beta_u = bu;
  out.sse = err;
  if (model == BaselineModel::kMNL) return out;

  auto ps_given = [&](double b_u) {
    return detail::brent([&](double bps) { return sse(psl_probabilities(rs, b_u, bps)); },
                         opts.beta_ps_lo, opts.beta_ps_hi, opts);
  };
  if (opts.joint) {
    auto [best_u, best] = detail::brent([&](double b_u) { return ps_given(b_u).second; },
                                        opts.beta_u_lo, opts.beta_u_hi, opts);
    out.beta_u = best_u;
    (void)best;
  }
  const auto [bps, e2] = ps_given(out.beta_u);
  out.beta_ps = bps;
  out.sse = e2;
  return out;
}

}  // namespace purc
