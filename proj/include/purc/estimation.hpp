#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "purc/detail/parallel.hpp"
#include "purc/error.hpp"
#include "purc/network.hpp"
#include "purc/perturbation.hpp"
#include "purc/solver.hpp"
#include "purc/trip.hpp"

namespace purc {

/// Observed unit-demand flow for one OD: traversals per trip.
struct EmpiricalFlow {
  DemandSpec demand;
  Eigen::VectorXd flows;
  std::vector<long long> counts;  // traversals per link; empty for model flows
  long long trip_count = 0;
  bool identical_link_sets = false;  // every trip used the same links
};

/// Count link traversals over trips of one OD and divide by the trip count.
inline EmpiricalFlow empirical_flows(const Network& net, std::span<const Trip> trips,
                                     const DemandSpec& d) {
  check_demand(net, d);
  if (trips.empty()) throw ValidationError("no trips for OD");
  EmpiricalFlow out;
  out.demand = d;
  out.counts.assign(net.num_links(), 0);
  std::optional<std::set<LinkIndex>> first;
  out.identical_link_sets = true;
  for (const Trip& t : trips) {
    if (t.od != d) throw ValidationError("trip endpoints do not match the OD");
    check_trip(net, t);
    for (LinkIndex e : t.links) ++out.counts[static_cast<std::size_t>(e)];
    std::set<LinkIndex> s(t.links.begin(), t.links.end());
    if (!first)
      first = std::move(s);
    else if (s != *first)
      out.identical_link_sets = false;
  }
  out.trip_count = static_cast<long long>(trips.size());
  out.flows.resize(static_cast<Eigen::Index>(net.num_links()));
  for (std::size_t e = 0; e < out.counts.size(); ++e)
    out.flows[static_cast<Eigen::Index>(e)] =
        static_cast<double>(out.counts[e]) / static_cast<double>(out.trip_count);
  return out;
}

/// Group trips by OD (in DemandSpec order) and count each group.
inline std::vector<EmpiricalFlow> empirical_flows(const Network& net, std::span<const Trip> trips) {
  std::map<DemandSpec, std::vector<Trip>> groups;
  for (const Trip& t : trips) groups[t.od].push_back(t);
  std::vector<EmpiricalFlow> out;
  out.reserve(groups.size());
  for (const auto& [d, ts] : groups) out.push_back(empirical_flows(net, ts, d));
  return out;
}

/// Model flows treated as data (exact, no counts).
inline EmpiricalFlow empirical_from_solution(const FlowSolution& sol) {
  if (!sol.demand) throw ValidationError("solution has no demand");
  EmpiricalFlow out;
  out.demand = *sol.demand;
  out.flows = sol.flows;
  return out;
}

struct SelectionPolicy {
  long long min_count = 0;  // drop links traversed fewer times than this
};

/// Rows kept by B: links with positive flow, optionally with enough traversals.
inline std::vector<LinkIndex> build_selection(const EmpiricalFlow& x,
                                              const SelectionPolicy& policy = {}) {
  std::vector<LinkIndex> sel;
  const bool use_counts = policy.min_count > 0 && !x.counts.empty();
  for (Eigen::Index e = 0; e < x.flows.size(); ++e) {
    if (!(x.flows[e] > 0.0)) continue;
    if (use_counts && x.counts[static_cast<std::size_t>(e)] < policy.min_count) continue;
    sel.push_back(static_cast<LinkIndex>(e));
  }
  if (sel.empty()) throw ValidationError("OD has no links left in the selection");
  return sel;
}

/// B A^T restricted to the node columns it touches, with its pseudoinverse.
/// Columns of untouched nodes are zero in B A^T and the matching rows of C
/// are zero, so dropping them leaves B A^T C unchanged.
struct ReducedPseudoinverse {
  std::vector<NodeIndex> nodes;  // column order of m
  Eigen::MatrixXd m;             // |B| x |nodes|
  Eigen::MatrixXd c;             // |nodes| x |B|
  Eigen::Index rank = 0;

  /// I - B A^T C, the projection that removes the multipliers.
  Eigen::MatrixXd annihilator() const {
    return Eigen::MatrixXd::Identity(m.rows(), m.rows()) - m * c;
  }
  /// C expanded to all nodes of the network.
  Eigen::MatrixXd full_c(std::size_t num_nodes) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_nodes), c.cols());
    for (std::size_t k = 0; k < nodes.size(); ++k) out.row(nodes[k]) = c.row(static_cast<Eigen::Index>(k));
    return out;
  }
};

/// Moore-Penrose inverse by SVD; singular values at or below
/// sigma_max * max(rows, cols) * eps are treated as zero.
inline Eigen::MatrixXd pseudoinverse(const Eigen::MatrixXd& m, Eigen::Index* rank = nullptr) {
  if (m.size() == 0) return Eigen::MatrixXd::Zero(m.cols(), m.rows());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double cutoff = (s.size() ? s[0] : 0.0) * static_cast<double>(std::max(m.rows(), m.cols())) *
                        std::numeric_limits<double>::epsilon();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > cutoff) {
      inv[i] = 1.0 / s[i];
      ++r;
    }
  if (rank) *rank = r;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline ReducedPseudoinverse reduced_pseudoinverse(const Network& net,
                                                  std::span<const LinkIndex> selection) {
  if (selection.empty()) throw ValidationError("empty link selection");
  ReducedPseudoinverse out;
  std::vector<Eigen::Index> slot(net.num_nodes(), -1);
  auto col = [&](NodeIndex v) {
    auto& s = slot[static_cast<std::size_t>(v)];
    if (s < 0) {
      s = static_cast<Eigen::Index>(out.nodes.size());
      out.nodes.push_back(v);
    }
    return s;
  };
  for (LinkIndex e : selection) {
    col(net.tail(e));
    col(net.head(e));
  }
  out.m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(selection.size()),
                                static_cast<Eigen::Index>(out.nodes.size()));
  for (std::size_t i = 0; i < selection.size(); ++i) {
    out.m(static_cast<Eigen::Index>(i), col(net.tail(selection[i]))) = -1.0;
    out.m(static_cast<Eigen::Index>(i), col(net.head(selection[i]))) = 1.0;
  }
  out.c = pseudoinverse(out.m, &out.rank);
  return out;
}

/// Max-norm residuals of the four Penrose identities
///   M C M = M,  C M C = C,  (M C)^T = M C,  (C M)^T = C M.
inline std::array<double, 4> penrose_residuals(const Eigen::MatrixXd& m, const Eigen::MatrixXd& c) {
  auto norm = [](const Eigen::MatrixXd& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; };
  const Eigen::MatrixXd mc = m * c;
  const Eigen::MatrixXd cm = c * m;
  return {norm(mc * m - m), norm(cm * c - c), norm(mc.transpose() - mc),
          norm(cm.transpose() - cm)};
}

/// Rows of y = w beta + eps contributed by one OD.
struct RegressionRows {
  DemandSpec demand;
  std::vector<LinkIndex> links;
  Eigen::VectorXd y;
  Eigen::MatrixXd w;
};

inline RegressionRows build_regression_rows(const Network& net, const EmpiricalFlow& x,
                                            std::span<const LinkIndex> selection,
                                            const ReducedPseudoinverse& c, Perturbation pert) {
  const auto n = static_cast<Eigen::Index>(selection.size());
  if (c.m.rows() != n) throw ValidationError("pseudoinverse does not match the selection");
  if (x.flows.size() != static_cast<Eigen::Index>(net.num_links()))
    throw ValidationError("flow vector length does not match the link count");
  const auto p = static_cast<Eigen::Index>(net.num_features());
  Eigen::VectorXd lf(n);
  Eigen::MatrixXd lz(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const LinkIndex e = selection[static_cast<std::size_t>(i)];
    lf[i] = net.length(e) * f_prime(pert, x.flows[e]);
    lz.row(i) = net.length(e) * net.features().row(e);
  }
  // (I - M C) v computed as v - M (C v) to stay O(|B| |V_B|).
  RegressionRows rows;
  rows.demand = x.demand;
  rows.links.assign(selection.begin(), selection.end());
  rows.y = lf - c.m * (c.c * lf);
  rows.w = lz - c.m * (c.c * lz);
  return rows;
}

/// Stacked regression rows across ODs.
struct RegressionSystem {
  std::vector<int> group;  // OD position per row
  Eigen::VectorXd y;
  Eigen::MatrixXd w;
  std::vector<std::string> names;

  Eigen::Index n_obs() const { return y.size(); }
};

inline RegressionSystem stack_rows(std::span<const RegressionRows> parts,
                                   std::vector<std::string> names) {
  Eigen::Index n = 0;
  for (const auto& r : parts) n += r.y.size();
  const auto p = static_cast<Eigen::Index>(names.size());
  RegressionSystem s;
  s.names = std::move(names);
  s.y.resize(n);
  s.w.resize(n, p);
  s.group.reserve(static_cast<std::size_t>(n));
  Eigen::Index at = 0;
  for (std::size_t g = 0; g < parts.size(); ++g) {
    const auto& r = parts[g];
    if (r.w.cols() != p) throw ValidationError("regressor count differs between ODs");
    s.y.segment(at, r.y.size()) = r.y;
    s.w.middleRows(at, r.y.size()) = r.w;
    s.group.insert(s.group.end(), static_cast<std::size_t>(r.y.size()), static_cast<int>(g));
    at += r.y.size();
  }
  return s;
}

enum class Covariance {
  kHC1,        // heteroscedasticity robust, n/(n-p) scaled
  kClassical,  // sigma^2 (W'W)^-1
  kClusterOD,  // clustered by OD
};

inline Covariance parse_covariance(const std::string& s) {
  if (s == "hc1") return Covariance::kHC1;
  if (s == "classical") return Covariance::kClassical;
  if (s == "cluster_od") return Covariance::kClusterOD;
  throw UsageError("unknown covariance '" + s + "' (hc1, classical, cluster_od)");
}

inline std::string to_string(Covariance c) {
  switch (c) {
    case Covariance::kHC1: return "hc1";
    case Covariance::kClassical: return "classical";
    case Covariance::kClusterOD: return "cluster_od";
  }
  return "?";
}

struct FitResult {
  Eigen::VectorXd beta;
  Eigen::VectorXd robust_se;
  Eigen::MatrixXd cov;
  double r2 = std::numeric_limits<double>::quiet_NaN();
  double adj_r2 = std::numeric_limits<double>::quiet_NaN();
  bool r2_defined = false;  // false when y has no variation
  double sse = 0.0;
  Eigen::Index n_obs = 0;
  Covariance covariance = Covariance::kHC1;
};

/// OLS of y on w. R^2 is centered; adjusted R^2 uses n-1 and n-p degrees of
/// freedom.
inline FitResult ols_fit(const RegressionSystem& sys, Covariance kind = Covariance::kHC1) {
  const Eigen::Index n = sys.y.size();
  const Eigen::Index p = sys.w.cols();
  if (p == 0) throw UsageError("regression has no regressors");
  if (n < p)
    throw ValidationError("regression has " + std::to_string(n) + " observations for " +
                          std::to_string(p) + " parameters");
  const Eigen::MatrixXd wtw = sys.w.transpose() * sys.w;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sys.w);
  qr.setThreshold(1e-10);
  if (qr.rank() < p)
    throw NumericalError("regressors are collinear (rank " + std::to_string(qr.rank()) + " < " +
                         std::to_string(p) + ")");
  FitResult fit;
  fit.covariance = kind;
  fit.n_obs = n;
  fit.beta = qr.solve(sys.y);
  const Eigen::VectorXd resid = sys.y - sys.w * fit.beta;
  fit.sse = resid.squaredNorm();
  const Eigen::MatrixXd bread = wtw.inverse();
  const double dof = n > p ? static_cast<double>(n - p) : 0.0;
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  switch (kind) {
    case Covariance::kClassical:
      meat = wtw * (dof > 0 ? fit.sse / dof : 0.0);
      break;
    case Covariance::kHC1:
      for (Eigen::Index i = 0; i < n; ++i)
        meat.noalias() += sys.w.row(i).transpose() * sys.w.row(i) * (resid[i] * resid[i]);
      if (dof > 0) meat *= static_cast<double>(n) / dof;
      break;
    case Covariance::kClusterOD: {
      std::map<int, Eigen::VectorXd> score;
      for (Eigen::Index i = 0; i < n; ++i) {
        auto [it, fresh] = score.try_emplace(sys.group[static_cast<std::size_t>(i)],
                                             Eigen::VectorXd::Zero(p));
        it->second += sys.w.row(i).transpose() * resid[i];
      }
      for (const auto& [g, s] : score) meat.noalias() += s * s.transpose();
      const auto groups = static_cast<double>(score.size());
      if (groups > 1 && dof > 0)
        meat *= groups / (groups - 1) * static_cast<double>(n - 1) / dof;
      break;
    }
  }
  fit.cov = bread * meat * bread;
  fit.cov = (0.5 * (fit.cov + fit.cov.transpose())).eval();
  fit.robust_se = fit.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  const double mean = sys.y.mean();
  const double sst = (sys.y.array() - mean).square().sum();
  if (sst > 0.0) {
    fit.r2_defined = true;
    fit.r2 = 1.0 - fit.sse / sst;
    if (n > p) fit.adj_r2 = 1.0 - (1.0 - fit.r2) * static_cast<double>(n - 1) / dof;
  }
  return fit;
}

struct EstimateOptions {
  SelectionPolicy selection;
  Covariance covariance = Covariance::kHC1;
  bool drop_identical = true;  // drop ODs whose trips all used the same links
  unsigned jobs = 1;           // 0 = hardware concurrency
};

struct OdDiagnostics {
  DemandSpec demand;
  long long trip_count = 0;
  Eigen::Index rows = 0;
  Eigen::Index rank = 0;  // rank of B A^T
  double seconds = 0.0;
  std::string dropped;    // reason, empty when used
};

struct Estimate {
  FitResult fit;
  RegressionSystem system;
  std::vector<OdDiagnostics> ods;
};

/// Transform every OD, stack the rows and fit beta by OLS.
///
/// Per-OD work runs on `opts.jobs` threads; rows are stacked in input order
/// so the fit does not depend on the thread count.
inline Estimate estimate(const Network& net, std::span<const EmpiricalFlow> flows,
                         Perturbation pert, const EstimateOptions& opts = {}) {
  if (flows.empty()) throw ValidationError("no ODs to estimate from");
  std::vector<std::optional<RegressionRows>> parts(flows.size());
  std::vector<OdDiagnostics> diag(flows.size());
  detail::parallel_for(flows.size(), opts.jobs, [&](std::size_t k) {
    const auto start = std::chrono::steady_clock::now();
    const EmpiricalFlow& x = flows[k];
    OdDiagnostics& d = diag[k];
    d.demand = x.demand;
    d.trip_count = x.trip_count;
    if (opts.drop_identical && x.identical_link_sets) {
      d.dropped = "identical link sets";
      return;
    }
    std::vector<LinkIndex> sel;
    try {
      sel = build_selection(x, opts.selection);
    } catch (const ValidationError&) {
      d.dropped = "empty selection";
      return;
    }
    const auto c = reduced_pseudoinverse(net, sel);
    parts[k] = build_regression_rows(net, x, sel, c, pert);
    d.rows = static_cast<Eigen::Index>(sel.size());
    d.rank = c.rank;
    d.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  std::vector<RegressionRows> kept;
  for (auto& p : parts)
    if (p) kept.push_back(std::move(*p));
  if (kept.empty()) throw ValidationError("every OD was dropped before estimation");
  Estimate out;
  out.system = stack_rows(kept, net.feature_names());
  out.fit = ols_fit(out.system, opts.covariance);
  out.ods = std::move(diag);
  return out;
}

}  // namespace purc
