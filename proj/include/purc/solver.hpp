#pragma once

#include <Eigen/Core>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "purc/detail/graph.hpp"
#include "purc/error.hpp"
#include "purc/network.hpp"
#include "purc/perturbation.hpp"

namespace purc {

enum class SolverMethod {
  kAwayStepNewton,  // conditional gradient warm start, active-set Newton polish
  kAwayStep,        // conditional gradient only
};

struct SolverOptions {
  double kkt_tol = 1e-9;
  double feas_tol = 1e-9;
  double zero_tol = 1e-8;
  int max_iters = 1000;       // Newton / active-set iterations
  int fw_max_iters = 2000;    // conditional-gradient iterations
  double fw_gap_tol = 1e-7;   // relative duality gap that ends the warm start
  SolverMethod method = SolverMethod::kAwayStepNewton;
};

/// Optimal unit-demand flow for one OD pair.
struct FlowSolution {
  std::optional<DemandSpec> demand;  // empty for the degenerate b = 0 problem
  Eigen::VectorXd flows;             // per link
  Eigen::VectorXd multipliers;       // per node, origin normalized to 0
  double objective = 0.0;            // U(x) in utils
  double kkt_residual = 0.0;
  std::vector<char> active;          // flows > zero_tol
  int cg_iterations = 0;
  int newton_iterations = 0;

  std::vector<LinkIndex> active_links() const {
    std::vector<LinkIndex> out;
    for (std::size_t e = 0; e < active.size(); ++e)
      if (active[e]) out.push_back(static_cast<LinkIndex>(e));
    return out;
  }
  std::size_t num_active() const {
    return static_cast<std::size_t>(std::count(active.begin(), active.end(), 1));
  }
};

/// U(x) = l'(u o x) - l'F(x).
inline double objective_value(const Network& net, const UtilityRates& u, Perturbation pert,
                              const Eigen::VectorXd& x) {
  double total = 0.0;
  for (LinkIndex e = 0; e < static_cast<LinkIndex>(net.num_links()); ++e)
    total += net.length(e) * (u[e] * x[e] - f_value(pert, x[e]));
  return total;
}

inline Eigen::VectorXd supply_vector(const Network& net, const std::optional<DemandSpec>& d) {
  if (!d) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_nodes()));
  return demand_vector(net, *d);
}

/// Complementarity, dual feasibility and primal feasibility in one number.
inline double kkt_residual(const Network& net, const UtilityRates& u, Perturbation pert,
                           const FlowSolution& sol) {
  const Eigen::VectorXd& x = sol.flows;
  const Eigen::VectorXd& lambda = sol.multipliers;
  double worst = 0.0;
  for (LinkIndex e = 0; e < static_cast<LinkIndex>(net.num_links()); ++e) {
    const double stat = net.length(e) * (u[e] - f_prime(pert, x[e])) + lambda[net.head(e)] -
                        lambda[net.tail(e)];
    if (x[e] > 0.0)
      worst = std::max(worst, std::abs(x[e] * stat));
    else
      worst = std::max(worst, std::max(0.0, stat));
  }
  const Eigen::VectorXd r = detail::node_balance(net, x) - supply_vector(net, sol.demand);
  if (r.size() > 0) worst = std::max(worst, r.cwiseAbs().maxCoeff());
  return worst;
}

namespace detail {

// Minimization form: f(x) = sum_e l_e (F(x_e) - u_e x_e) = -U(x).
class FlowProblem {
 public:
  FlowProblem(const Network& net, const UtilityRates& u, Perturbation pert, DemandSpec d,
              const SolverOptions& opts)
      : net_(net), u_(u), pert_(pert), d_(d), opts_(opts),
        m_(static_cast<Eigen::Index>(net.num_links())) {}

  FlowSolution solve() {
    if (!reachable(net_, d_.origin, d_.destination))
      throw InfeasibleError("destination '" + net_.nodes()[static_cast<std::size_t>(d_.destination)] +
                            "' is unreachable from origin '" +
                            net_.nodes()[static_cast<std::size_t>(d_.origin)] + "'");
    Eigen::VectorXd x = conditional_gradient();
    if (opts_.method == SolverMethod::kAwayStepNewton) {
      x = active_set_newton(std::move(x));
    } else {
      truncate_small(x);
    }
    return finish(x);
  }

 private:
  double grad(LinkIndex e, double xe) const {
    return net_.length(e) * (f_prime(pert_, xe) - u_[e]);
  }
  double hess(LinkIndex e, double xe) const { return net_.length(e) * f_second(pert_, xe); }

  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
    Eigen::VectorXd g(m_);
    for (LinkIndex e = 0; e < m_; ++e) g[e] = grad(e, x[e]);
    return g;
  }

  double cost(const Eigen::VectorXd& x) const {
    double f = 0.0;
    for (LinkIndex e = 0; e < m_; ++e)
      f += net_.length(e) * (f_value(pert_, x[e]) - u_[e] * x[e]);
    return f;
  }

  // Exact line search along d on [0, step_max]: the directional derivative
  // is nondecreasing in the step because f is convex. `shift` holds per-entry
  // constants whose weighted sum against d is zero (d lies in the null space
  // of A); subtracting them keeps the slope accurate near the optimum.
  double line_search(const Eigen::VectorXd& x, const std::vector<std::pair<LinkIndex, double>>& d,
                     double step_max, const std::vector<double>& shift = {}) const {
    auto slope = [&](double s) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        const auto [e, de] = d[i];
        const double g = grad(e, std::max(0.0, x[e] + s * de));
        acc += de * (shift.empty() ? g : g - shift[i]);
      }
      return acc;
    };
    if (slope(0.0) >= 0.0) return 0.0;
    if (slope(step_max) <= 0.0) return step_max;
    std::uintmax_t max_iter = 200;
    auto tol = [](double a, double b) { return std::abs(b - a) <= 1e-15 * std::max(1.0, std::abs(a)); };
    auto [lo, hi] = boost::math::tools::toms748_solve(slope, 0.0, step_max, tol, max_iter);
    return 0.5 * (lo + hi);
  }

  Eigen::VectorXd path_flow(const std::vector<LinkIndex>& path) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(m_);
    for (LinkIndex e : path) v[e] += 1.0;
    return v;
  }

  // Away-step conditional gradient over the convex hull of origin-destination
  // paths. The linear subproblem is a shortest path with positive costs
  // l_e (F'(x_e) - u_e).
  Eigen::VectorXd conditional_gradient() {
    const double gap_tol =
        opts_.method == SolverMethod::kAwayStep ? opts_.kkt_tol : opts_.fw_gap_tol;
    Eigen::VectorXd c0(m_);
    for (LinkIndex e = 0; e < m_; ++e) c0[e] = grad(e, 0.0);
    std::map<std::vector<LinkIndex>, double> atoms;
    auto first = shortest_path(net_, c0, d_.origin, d_.destination);
    atoms[first] = 1.0;
    Eigen::VectorXd x = path_flow(first);

    for (int it = 0; it < opts_.fw_max_iters; ++it) {
      cg_iterations_ = it + 1;
      const Eigen::VectorXd g = gradient(x);
      const auto s = shortest_path(net_, g, d_.origin, d_.destination);
      double gs = 0.0;
      for (LinkIndex e : s) gs += g[e];
      const double gx = g.dot(x);
      const double gap = gx - gs;
      if (gap <= gap_tol * std::max(1.0, std::abs(cost(x)))) break;

      auto away = atoms.begin();
      double ga = -detail::kInf;
      for (auto it2 = atoms.begin(); it2 != atoms.end(); ++it2) {
        double v = 0.0;
        for (LinkIndex e : it2->first) v += g[e];
        if (v > ga) {
          ga = v;
          away = it2;
        }
      }

      std::vector<std::pair<LinkIndex, double>> dir;
      const bool toward = gap >= ga - gx || atoms.size() == 1;
      if (toward) {
        const Eigen::VectorXd d = path_flow(s) - x;
        for (LinkIndex e = 0; e < m_; ++e)
          if (d[e] != 0.0) dir.emplace_back(e, d[e]);
        const double step = line_search(x, dir, 1.0);
        if (step <= 0.0) break;
        for (auto& [p, w] : atoms) w *= (1.0 - step);
        atoms[s] += step;
        if (step >= 1.0) {
          atoms.clear();
          atoms[s] = 1.0;
        }
      } else {
        const double alpha = away->second;
        const Eigen::VectorXd d = x - path_flow(away->first);
        for (LinkIndex e = 0; e < m_; ++e)
          if (d[e] != 0.0) dir.emplace_back(e, d[e]);
        const double step_max = alpha / (1.0 - alpha);
        const double step = line_search(x, dir, step_max);
        if (step <= 0.0) break;
        for (auto& [p, w] : atoms) w *= (1.0 + step);
        if (step >= step_max) {
          atoms.erase(away);
        } else {
          away->second -= step;
        }
      }
      std::erase_if(atoms, [](const auto& kv) { return kv.second <= 0.0; });
      x.setZero();
      double total = 0.0;
      for (const auto& [p, w] : atoms) total += w;
      for (auto& [p, w] : atoms) {
        w /= total;
        for (LinkIndex e : p) x[e] += w;
      }
    }
    return x;
  }

  // Nodes potentials from the least-squares solution of the stationarity
  // system on the given links, extended to the rest of the graph with
  // shortest-path distances under the zero-flow costs.
  Eigen::VectorXd multipliers(const Eigen::VectorXd& x, const std::vector<LinkIndex>& links) const {
    const auto n = static_cast<Eigen::Index>(net_.num_nodes());
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(n);
    if (!links.empty()) {
      std::vector<double> ones(links.size(), 1.0);
      GroundedLaplacian lap(net_, links, ones);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
      for (LinkIndex e : links) {
        const double g = grad(e, x[e]);
        rhs[net_.head(e)] += g;
        rhs[net_.tail(e)] -= g;
      }
      lambda = lap.solve(rhs);
    }
    std::vector<double> start(net_.num_nodes(), kInf);
    start[static_cast<std::size_t>(d_.origin)] = lambda[d_.origin];
    for (LinkIndex e : links) {
      start[static_cast<std::size_t>(net_.tail(e))] = lambda[net_.tail(e)];
      start[static_cast<std::size_t>(net_.head(e))] = lambda[net_.head(e)];
    }
    Eigen::VectorXd c0(m_);
    for (LinkIndex e = 0; e < m_; ++e) c0[e] = grad(e, 0.0);
    auto pot = extend_potentials(net_, c0, std::move(start));
    double top = -kInf;
    for (double p : pot)
      if (p < kInf) top = std::max(top, p);
    for (std::size_t v = 0; v < pot.size(); ++v)
      lambda[static_cast<Eigen::Index>(v)] = pot[v] < kInf ? pot[v] : top;
    lambda.array() -= lambda[d_.origin];
    return lambda;
  }

  // Least-norm correction restoring A x = b using only the given links.
  void project_feasible(Eigen::VectorXd& x, const std::vector<LinkIndex>& links) const {
    const Eigen::VectorXd r = demand_vector(net_, d_) - node_balance(net_, x);
    std::vector<double> ones(links.size(), 1.0);
    GroundedLaplacian lap(net_, links, ones);
    const Eigen::VectorXd nu = lap.solve(r);
    for (LinkIndex e : links) x[e] += nu[net_.head(e)] - nu[net_.tail(e)];
  }

  void truncate_small(Eigen::VectorXd& x) const {
    std::vector<LinkIndex> keep;
    bool changed = false;
    for (LinkIndex e = 0; e < m_; ++e) {
      if (x[e] > opts_.zero_tol) {
        keep.push_back(e);
      } else if (x[e] != 0.0) {
        x[e] = 0.0;
        changed = true;
      }
    }
    if (changed) project_feasible(x, keep);
  }

  Eigen::VectorXd active_set_newton(Eigen::VectorXd x) {
    std::vector<char> in_set(static_cast<std::size_t>(m_), 0);
    for (LinkIndex e = 0; e < m_; ++e) in_set[static_cast<std::size_t>(e)] = x[e] > 0.0;
    auto current = [&] {
      std::vector<LinkIndex> s;
      for (LinkIndex e = 0; e < m_; ++e)
        if (in_set[static_cast<std::size_t>(e)]) s.push_back(e);
      return s;
    };
    const double stat_tol = 1e-3 * opts_.kkt_tol;
    std::vector<LinkIndex> added;
    bool single_mode = false;

    while (newton_iterations_ < opts_.max_iters) {
      // Newton iterations on the current working set.
      bool first_step = true;
      while (newton_iterations_ < opts_.max_iters) {
        ++newton_iterations_;
        const auto links = current();
        std::vector<double> w(links.size());
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net_.num_nodes()));
        for (std::size_t i = 0; i < links.size(); ++i) {
          const LinkIndex e = links[i];
          w[i] = 1.0 / hess(e, x[e]);
          const double y = w[i] * grad(e, x[e]);
          rhs[net_.head(e)] -= y;
          rhs[net_.tail(e)] += y;
        }
        GroundedLaplacian lap(net_, links, w);
        const Eigen::VectorXd nu = lap.solve(rhs);
        std::vector<std::pair<LinkIndex, double>> dir;
        std::vector<double> shift;
        double stat = 0.0;
        std::vector<LinkIndex> blocked;
        for (std::size_t i = 0; i < links.size(); ++i) {
          const LinkIndex e = links[i];
          const double r = grad(e, x[e]) + nu[net_.head(e)] - nu[net_.tail(e)];
          stat = std::max(stat, std::abs(r));
          const double dx = -w[i] * r;
          if (x[e] <= 0.0 && dx < 0.0) {
            blocked.push_back(e);
          } else if (dx != 0.0) {
            dir.emplace_back(e, dx);
            shift.push_back(nu[net_.tail(e)] - nu[net_.head(e)]);
          }
        }
        if (!blocked.empty()) {
          for (LinkIndex e : blocked) {
            in_set[static_cast<std::size_t>(e)] = 0;
            x[e] = 0.0;
          }
          if (first_step && !added.empty()) {
            const bool all_dropped = std::all_of(added.begin(), added.end(), [&](LinkIndex e) {
              return !in_set[static_cast<std::size_t>(e)];
            });
            if (all_dropped && !single_mode) {
              in_set[static_cast<std::size_t>(added.front())] = 1;
              added.resize(1);
              single_mode = true;
            }
          }
          continue;
        }
        first_step = false;
        if (stat <= stat_tol) break;
        double step_max = 4.0;
        LinkIndex blocking = -1;
        for (const auto& [e, dx] : dir) {
          if (dx < 0.0 && x[e] / -dx < step_max) {
            step_max = x[e] / -dx;
            blocking = e;
          }
        }
        const double step = line_search(x, dir, step_max, shift);
        for (const auto& [e, dx] : dir) x[e] = std::max(0.0, x[e] + step * dx);
        if (blocking >= 0 && step >= step_max) {
          x[blocking] = 0.0;
          in_set[static_cast<std::size_t>(blocking)] = 0;
        } else if (step == 0.0) {
          break;
        }
      }

      // Drop links that fell below the activity threshold and restore A x = b.
      bool truncated = false;
      for (LinkIndex e = 0; e < m_; ++e) {
        if (in_set[static_cast<std::size_t>(e)] && x[e] <= opts_.zero_tol) {
          in_set[static_cast<std::size_t>(e)] = 0;
          x[e] = 0.0;
          truncated = true;
        }
      }
      if (truncated) {
        project_feasible(x, current());
        continue;
      }

      // Price out the inactive links.
      const auto links = current();
      const Eigen::VectorXd lambda = multipliers(x, links);
      std::vector<std::pair<double, LinkIndex>> violated;
      for (LinkIndex e = 0; e < m_; ++e) {
        if (in_set[static_cast<std::size_t>(e)]) continue;
        const double v = net_.length(e) * u_[e] + lambda[net_.head(e)] - lambda[net_.tail(e)];
        if (v > 0.5 * opts_.kkt_tol) violated.emplace_back(v, e);
      }
      if (violated.empty()) break;
      std::sort(violated.begin(), violated.end(), std::greater<>());
      added.clear();
      if (single_mode) {
        added.push_back(violated.front().second);
      } else {
        for (const auto& [v, e] : violated) added.push_back(e);
      }
      for (LinkIndex e : added) in_set[static_cast<std::size_t>(e)] = 1;
    }
    project_feasible(x, current());
    return x;
  }

  FlowSolution finish(Eigen::VectorXd x) const {
    FlowSolution sol;
    sol.demand = d_;
    for (LinkIndex e = 0; e < m_; ++e)
      if (x[e] < 0.0) x[e] = 0.0;
    sol.active.assign(static_cast<std::size_t>(m_), 0);
    std::vector<LinkIndex> links;
    for (LinkIndex e = 0; e < m_; ++e) {
      if (x[e] > opts_.zero_tol) {
        sol.active[static_cast<std::size_t>(e)] = 1;
        links.push_back(e);
      }
    }
    sol.multipliers = multipliers(x, links);
    sol.flows = std::move(x);
    sol.objective = objective_value(net_, u_, pert_, sol.flows);
    sol.cg_iterations = cg_iterations_;
    sol.newton_iterations = newton_iterations_;
    sol.kkt_residual = kkt_residual(net_, u_, pert_, sol);
    if (!(sol.kkt_residual <= opts_.kkt_tol))
      throw ConvergenceError("flow solver stopped with KKT residual " +
                                 std::to_string(sol.kkt_residual) + " above tolerance",
                             sol.kkt_residual);
    return sol;
  }

  const Network& net_;
  const UtilityRates& u_;
  Perturbation pert_;
  DemandSpec d_;
  SolverOptions opts_;
  Eigen::Index m_;
  int cg_iterations_ = 0;
  int newton_iterations_ = 0;
};

}  // namespace detail

inline FlowSolution zero_flow_solution(const Network& net) {
  FlowSolution sol;
  sol.flows = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_links()));
  sol.multipliers = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_nodes()));
  sol.active.assign(net.num_links(), 0);
  return sol;
}

/// Maximize l'(u o x) - l'F(x) subject to A x = b, x >= 0 for one OD pair.
///
/// Throws InfeasibleError when the destination is unreachable and
/// ConvergenceError when the KKT residual stays above `opts.kkt_tol`.
inline FlowSolution solve_flow(const Network& net, const UtilityRates& u, const DemandSpec& d,
                               Perturbation pert, const SolverOptions& opts = {}) {
  check_demand(net, d);
  if (u.size() != static_cast<Eigen::Index>(net.num_links()))
    throw ValidationError("utility vector length does not match the link count");
  if (!(opts.kkt_tol > 0 && opts.feas_tol > 0 && opts.zero_tol > 0))
    throw UsageError("solver tolerances must be positive");
  return detail::FlowProblem(net, u, pert, d, opts).solve();
}

/// Variant taking the raw demand vector. b = 0 yields the all-zero flow.
inline FlowSolution solve_flow(const Network& net, const UtilityRates& u, const Eigen::VectorXd& b,
                               Perturbation pert, const SolverOptions& opts = {}) {
  if (b.size() != static_cast<Eigen::Index>(net.num_nodes()))
    throw ValidationError("demand vector length does not match the node count");
  if (b.isZero(0.0)) return zero_flow_solution(net);
  std::optional<NodeIndex> origin, destination;
  for (Eigen::Index v = 0; v < b.size(); ++v) {
    if (b[v] == -1.0 && !origin) {
      origin = static_cast<NodeIndex>(v);
    } else if (b[v] == 1.0 && !destination) {
      destination = static_cast<NodeIndex>(v);
    } else if (b[v] != 0.0) {
      throw ValidationError("demand vector must have a single -1 and a single +1");
    }
  }
  if (!origin || !destination)
    throw ValidationError("demand vector must have a single -1 and a single +1");
  return solve_flow(net, u, DemandSpec{*origin, *destination}, pert, opts);
}

struct SubstitutionResult {
  FlowSolution base;
  FlowSolution perturbed;
  std::vector<std::pair<LinkIndex, double>> ratios;  // base-active links only
  std::vector<LinkIndex> inactive_in_base;
};

/// Per-link perturbed/base flow ratios over the links active in `base`.
inline std::vector<std::pair<LinkIndex, double>> flow_ratios(const FlowSolution& base,
                                                             const FlowSolution& perturbed) {
  std::vector<std::pair<LinkIndex, double>> out;
  for (LinkIndex e : base.active_links()) out.emplace_back(e, perturbed.flows[e] / base.flows[e]);
  return out;
}

/// Solve twice, before and after adding `delta` to the utility rates.
inline SubstitutionResult substitution_experiment(const Network& net, const UtilityRates& u,
                                                  const DemandSpec& d, Perturbation pert,
                                                  const Eigen::VectorXd& delta,
                                                  const SolverOptions& opts = {}) {
  if (delta.size() != u.size()) throw ValidationError("delta length does not match the link count");
  SubstitutionResult r;
  r.base = solve_flow(net, u, d, pert, opts);
  r.perturbed = solve_flow(net, UtilityRates(u.values() + delta), d, pert, opts);
  r.ratios = flow_ratios(r.base, r.perturbed);
  for (std::size_t e = 0; e < r.base.active.size(); ++e)
    if (!r.base.active[e]) r.inactive_in_base.push_back(static_cast<LinkIndex>(e));
  return r;
}

struct PathFlow {
  std::vector<LinkIndex> links;
  double weight = 0.0;
};

struct FlowDecomposition {
  std::vector<PathFlow> paths;
  double residual = 0.0;  // largest link flow left unassigned
};

/// Greedy decomposition of an origin-destination flow into loop-free paths,
/// always following the outgoing link with the largest remaining flow.
inline FlowDecomposition decompose_flow(const Network& net, const FlowSolution& sol,
                                        double tol = 1e-6) {
  FlowDecomposition out;
  if (!sol.demand) return out;
  const auto [origin, destination] = *sol.demand;
  Eigen::VectorXd rest = sol.flows;
  constexpr double kEps = 1e-13;
  for (std::size_t guard = 0; guard <= net.num_links() + 1; ++guard) {
    double outflow = 0.0;
    for (LinkIndex e : net.out_links(origin)) outflow += std::max(0.0, rest[e]);
    if (outflow <= kEps) break;
    std::vector<char> seen(net.num_nodes(), 0);
    PathFlow path;
    path.weight = detail::kInf;
    NodeIndex v = origin;
    seen[static_cast<std::size_t>(v)] = 1;
    bool stuck = false;
    while (v != destination) {
      LinkIndex best = -1;
      for (LinkIndex e : net.out_links(v))
        if (rest[e] > kEps && (best < 0 || rest[e] > rest[best])) best = e;
      if (best < 0) {
        stuck = true;
        break;
      }
      path.links.push_back(best);
      path.weight = std::min(path.weight, rest[best]);
      v = net.head(best);
      if (seen[static_cast<std::size_t>(v)])
        throw NumericalError("flow contains a directed cycle through node '" +
                             net.nodes()[static_cast<std::size_t>(v)] + "'");
      seen[static_cast<std::size_t>(v)] = 1;
    }
    if (stuck) break;
    for (LinkIndex e : path.links) rest[e] -= path.weight;
    out.paths.push_back(std::move(path));
  }
  out.residual = rest.size() > 0 ? rest.cwiseAbs().maxCoeff() : 0.0;
  if (out.residual > tol)
    throw NumericalError("flow decomposition left residual " + std::to_string(out.residual));
  return out;
}

}  // namespace purc

