// purc: command-line front end for the perturbed-utility route choice toolkit.
//
// Every subcommand writes fixed-name artifacts under --out DIR together with
// config.toml (the effective configuration) and manifest.json. Failures print
// an error JSON on stderr, also written to DIR/error.json when possible.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "purc/baselines.hpp"
#include "purc/config.hpp"
#include "purc/estimation.hpp"
#include "purc/io.hpp"
#include "purc/network.hpp"
#include "purc/preprocess.hpp"
#include "purc/simulate.hpp"
#include "purc/solver.hpp"
#include "purc/validation.hpp"

namespace fs = std::filesystem;
using json = purc::io::json;
using Clock = std::chrono::steady_clock;

namespace {

// Options shared by every subcommand.
struct Common {
  std::vector<std::string> configs;
  std::vector<std::string> sets;
  std::string network;
  std::string perturbation;
  std::vector<double> beta;
  long long seed = -1;
  unsigned jobs = 1;
  std::string out = "out";
};

struct Run {
  std::string command;
  std::vector<std::string> argv;
  purc::Config cfg;
  json timings = json::object();
  std::vector<std::string> outputs;
};

std::string resolve(const std::string& path, const fs::path& base) {
  const fs::path p(path);
  return p.is_absolute() ? path : (base / p).lexically_normal().string();
}

purc::Config::Value parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(key + " = " + text);
  return purc::Config::parse(in, "--set " + key).values().at(key);
}

// Later config files win; flags win over files; --set wins over flags.
purc::Config effective_config(const Common& c) {
  purc::Config cfg;
  for (const auto& file : c.configs) {
    purc::Config part = purc::Config::load(file);
    const fs::path dir = fs::path(file).parent_path();
    for (const auto& [key, value] : part.values()) {
      if ((key == "network" || key.ends_with(".demand")) && std::holds_alternative<std::string>(value))
        cfg.set(key, resolve(std::get<std::string>(value), dir));
      else
        cfg.set(key, value);
    }
  }
  if (!c.network.empty()) cfg.set("network", c.network);
  if (!c.perturbation.empty()) cfg.set("perturbation", c.perturbation);
  if (!c.beta.empty()) cfg.set("beta", c.beta);
  if (c.seed >= 0) {
    if (c.seed > (1LL << 53)) throw purc::UsageError("--seed must be at most 2^53");
    cfg.set("seed", static_cast<double>(c.seed));
  }
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw purc::UsageError("--set expects key=value, got '" + s + "'");
    const std::string key(purc::detail::trim(s.substr(0, eq)));
    cfg.set(key, parse_value(key, std::string(purc::detail::trim(s.substr(eq + 1)))));
  }
  return cfg;
}

purc::Perturbation perturbation(const purc::Config& cfg) {
  return purc::parse_perturbation(cfg.get<std::string>("perturbation", "modified_entropy"));
}

purc::SolverOptions solver_options(const purc::Config& cfg) {
  purc::SolverOptions o;
  o.kkt_tol = cfg.get<double>("solver.kkt_tol", o.kkt_tol);
  o.feas_tol = cfg.get<double>("solver.feas_tol", o.feas_tol);
  o.zero_tol = cfg.get<double>("solver.zero_tol", o.zero_tol);
  o.max_iters = static_cast<int>(cfg.get<double>("solver.max_iters", o.max_iters));
  o.fw_max_iters = static_cast<int>(cfg.get<double>("solver.fw_max_iters", o.fw_max_iters));
  o.fw_gap_tol = cfg.get<double>("solver.fw_gap_tol", o.fw_gap_tol);
  const auto method = cfg.get<std::string>("solver.method", "newton");
  if (method == "newton")
    o.method = purc::SolverMethod::kAwayStepNewton;
  else if (method == "away_step")
    o.method = purc::SolverMethod::kAwayStep;
  else
    throw purc::UsageError("solver.method must be 'newton' or 'away_step'");
  return o;
}

purc::FeatureSpec feature_spec(const purc::Config& cfg) {
  return {cfg.get<std::vector<std::string>>("features", {})};
}

purc::Network network(const purc::Config& cfg) {
  if (!cfg.has("network")) throw purc::UsageError("no network given (--network or config 'network')");
  return purc::load_network(cfg.get<std::string>("network"), feature_spec(cfg));
}

Eigen::VectorXd beta_vector(const std::vector<double>& b, const purc::Network& net, const std::string& what) {
  if (b.size() != net.num_features())
    throw purc::UsageError(what + " has " + std::to_string(b.size()) + " values but the model has " +
                           std::to_string(net.num_features()) + " features");
  return Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
}

Eigen::VectorXd beta(const purc::Config& cfg, const purc::Network& net) {
  return beta_vector(cfg.get<std::vector<double>>("beta"), net, "beta");
}

purc::DemandSpec parse_od(const purc::Network& net, const std::string& od) {
  const auto comma = od.find(',');
  if (comma == std::string::npos) throw purc::UsageError("--od expects ORIGIN,DESTINATION");
  return purc::make_demand(net, od.substr(0, comma), od.substr(comma + 1));
}

std::string node_id(const purc::Network& net, purc::NodeIndex v) {
  return net.nodes()[static_cast<std::size_t>(v)];
}

void write_file(Run& run, const fs::path& dir, const std::string& name,
                const std::function<void(std::ostream&)>& body) {
  const fs::path path = dir / name;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw purc::ParseError("cannot write " + path.string());
  body(os);
  if (!os) throw purc::ParseError("failed writing " + path.string());
  run.outputs.push_back(name);
}

void write_json(Run& run, const fs::path& dir, const std::string& name, const json& j) {
  write_file(run, dir, name, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

json manifest(const Run& run, const std::string& status) {
  const std::string text = run.cfg.to_string();
  json seed = run.cfg.has("seed") ? json(static_cast<std::uint64_t>(run.cfg.get<double>("seed")))
                                  : json(nullptr);
  return {{"command", run.command},
          {"args", run.argv},
          {"status", status},
          {"config_hash", "fnv1a64:" + hex64(purc::fnv1a64(text))},
          {"seed", seed},
          {"version", PURC_VERSION},
          {"compiler", __VERSION__},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"timestamp", utc_timestamp()},
          {"outputs", run.outputs},
          {"timings", run.timings}};
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---- subcommands ----

void cmd_solve(Run& run, const Common& c, const std::string& od_arg,
               const std::vector<std::string>& deltas) {
  run.cfg.set("run.od", od_arg);
  if (!deltas.empty()) run.cfg.set("run.delta", deltas);
  const auto net = network(run.cfg);
  const auto u = purc::link_utilities(net, beta(run.cfg, net));
  const auto od = parse_od(net, od_arg);
  const auto opts = solver_options(run.cfg);
  const auto pert = perturbation(run.cfg);
  const fs::path dir(c.out);
  if (deltas.empty()) {
    const auto sol = purc::solve_flow(net, u, od, pert, opts);
    write_file(run, dir, "flows.csv", [&](std::ostream& os) { purc::io::write_flows_csv(os, net, sol); });
    return;
  }
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_links()));
  for (const auto& d : deltas) {
    const auto colon = d.rfind(':');
    if (colon == std::string::npos) throw purc::UsageError("--delta expects LINK:VALUE, got '" + d + "'");
    delta[net.link_index(d.substr(0, colon))] += purc::detail::parse_double(d.substr(colon + 1), "--delta");
  }
  const auto r = purc::substitution_experiment(net, u, od, pert, delta, opts);
  write_file(run, dir, "flows.csv", [&](std::ostream& os) { purc::io::write_flows_csv(os, net, r.base); });
  write_file(run, dir, "substitution.csv", [&](std::ostream& os) {
    os << "link_id,base_flow,perturbed_flow,ratio\n";
    os.precision(17);
    for (purc::LinkIndex e = 0; e < static_cast<purc::LinkIndex>(net.num_links()); ++e) {
      os << net.link(e).id << ',' << r.base.flows[e] << ',' << r.perturbed.flows[e] << ',';
      if (r.base.active[static_cast<std::size_t>(e)]) os << r.perturbed.flows[e] / r.base.flows[e];
      os << '\n';
    }
  });
}

void cmd_estimate(Run& run, const Common& c, const std::string& trips_path) {
  run.cfg.set("run.trips", trips_path);
  const auto net = network(run.cfg);
  const auto trips = purc::io::load_trips(trips_path, net);
  const auto flows = purc::empirical_flows(net, trips);
  purc::EstimateOptions opts;
  opts.covariance = purc::parse_covariance(run.cfg.get<std::string>("estimation.covariance", "hc1"));
  opts.selection.min_count = static_cast<long long>(run.cfg.get<double>("estimation.min_count", 0.0));
  opts.drop_identical = run.cfg.get<bool>("estimation.drop_identical", true);
  opts.jobs = c.jobs;
  const auto pert = perturbation(run.cfg);
  const auto est = purc::estimate(net, flows, pert, opts);
  json per_od = json::array();
  for (const auto& d : est.ods)
    per_od.push_back({{"origin", node_id(net, d.demand.origin)},
                      {"destination", node_id(net, d.demand.destination)},
                      {"seconds", d.seconds}});
  run.timings["per_od"] = per_od;
  write_json(run, c.out, "fit.json", purc::io::fit_to_json(net, est, pert));
}

void cmd_simulate(Run& run, const Common& c) {
  const auto net = network(run.cfg);
  purc::SimulationPlan plan;
  plan.beta = beta(run.cfg, net);
  plan.seed = static_cast<std::uint64_t>(run.cfg.get<double>("seed", 0.0));
  if (run.cfg.has("simulate.demand")) {
    // One entry per trip, so that trip_count can vary between ODs.
    for (const auto& row : purc::load_demand(net, run.cfg.get<std::string>("simulate.demand")))
      for (long long i = 0; i < row.trip_count; ++i) plan.ods.push_back(row.od);
    plan.trips_per_od = 1;
  } else {
    const auto o = run.cfg.get<std::vector<std::string>>("simulate.origins");
    const auto d = run.cfg.get<std::vector<std::string>>("simulate.destinations");
    if (o.size() != d.size()) throw purc::UsageError("simulate.origins and simulate.destinations differ in length");
    for (std::size_t k = 0; k < o.size(); ++k) plan.ods.push_back(purc::make_demand(net, o[k], d[k]));
    plan.trips_per_od = static_cast<int>(run.cfg.get<double>("simulate.trips_per_od", 1.0));
  }
  if (plan.ods.empty()) throw purc::UsageError("simulation plan has no ODs");
  const auto pert = perturbation(run.cfg);
  const auto opts = solver_options(run.cfg);
  const auto trips = purc::simulate_dataset(net, plan, pert, opts, c.jobs);
  write_file(run, c.out, "trips.jsonl", [&](std::ostream& os) { purc::io::write_trips(os, net, trips); });

  // Per-OD solution summaries. Link time is length times the time column
  // of the raw network (pace, min/km) when present, else length.
  std::vector<purc::DemandSpec> unique;
  for (const auto& d : plan.ods)
    if (std::find(unique.begin(), unique.end(), d) == unique.end()) unique.push_back(d);
  const auto u = purc::link_utilities(net, plan.beta);
  std::vector<purc::FlowSolution> sols(unique.size());
  purc::detail::parallel_for(unique.size(), c.jobs,
                             [&](std::size_t k) { sols[k] = purc::solve_flow(net, u, unique[k], pert, opts); });
  const auto raw = purc::load_network(run.cfg.get<std::string>("network"));
  const bool explicit_col = run.cfg.has("simulate.time_column");
  const auto col_name = run.cfg.get<std::string>("simulate.time_column", "pace");
  Eigen::VectorXd time = raw.lengths();
  if (auto col = raw.feature_column(col_name))
    time = time.cwiseProduct(raw.features().col(*col));
  else if (explicit_col)
    throw purc::UsageError("simulate.time_column '" + col_name + "' is not a network column");
  const auto stats = purc::summarize_solution_stats(net, sols, time);
  write_file(run, c.out, "solution_stats.csv",
             [&](std::ostream& os) { purc::write_solution_stats_csv(os, net, stats); });
}

void cmd_validate(Run& run, const Common& c, const std::string& trips_path, const std::string& fit_path) {
  run.cfg.set("run.trips", trips_path);
  if (!fit_path.empty()) run.cfg.set("run.fit", fit_path);
  const auto net = network(run.cfg);
  const Eigen::VectorXd b =
      fit_path.empty() ? beta(run.cfg, net) : purc::io::load_fit_beta(fit_path, net.feature_names());
  const auto trips = purc::io::load_trips(trips_path, net);
  const auto r = purc::validate(net, b, trips, perturbation(run.cfg), solver_options(run.cfg), c.jobs);
  write_json(run, c.out, "report.json", purc::io::report_to_json(r));
  write_file(run, c.out, "flows_scatter.csv",
             [&](std::ostream& os) { purc::io::write_flows_scatter_csv(os, net, r); });
  write_file(run, c.out, "outside_cdf.csv", [&](std::ostream& os) { purc::io::write_outside_cdf_csv(os, r); });
}

void write_split(Run& run, const Common& c, const purc::Network& net, std::span<const purc::Trip> kept,
                 std::span<const purc::Trip> discarded) {
  write_file(run, c.out, "kept.jsonl", [&](std::ostream& os) { purc::io::write_trips(os, net, kept); });
  write_file(run, c.out, "discarded.jsonl", [&](std::ostream& os) { purc::io::write_trips(os, net, discarded); });
}

void cmd_trim(Run& run, const Common& c, const std::string& trips_path, std::size_t n_o, std::size_t n_d) {
  run.cfg.set("run.trips", trips_path);
  run.cfg.set("trim.n_origins", static_cast<double>(n_o));
  run.cfg.set("trim.n_destinations", static_cast<double>(n_d));
  const auto net = network(run.cfg);
  const auto trips = purc::io::load_trips(trips_path, net);
  const auto so = purc::select_trim_nodes(net, trips, n_o, purc::TrimDirection::kOrigin);
  const auto sd = purc::select_trim_nodes(net, trips, n_d, purc::TrimDirection::kDestination);
  const auto r = purc::trim_trips(net, trips, so.nodes, sd.nodes);
  std::vector<char> kept(trips.size(), 0);
  for (std::size_t i : r.kept_index) kept[i] = 1;
  std::vector<purc::Trip> discarded;
  for (std::size_t i = 0; i < trips.size(); ++i)
    if (!kept[i]) discarded.push_back(trips[i]);
  write_split(run, c, net, r.kept, discarded);
  auto side = [&](const purc::TrimSelection& s) {
    json nodes = json::array();
    for (auto v : s.nodes) nodes.push_back(node_id(net, v));
    return json{{"nodes", nodes}, {"scores", s.scores}, {"remaining", s.remaining}};
  };
  write_json(run, c.out, "summary.json",
             {{"input", trips.size()},
              {"kept", r.kept.size()},
              {"discarded", r.discarded},
              {"origins", side(so)},
              {"destinations", side(sd)}});
}

void cmd_filter(Run& run, const Common& c, const std::string& trips_path, std::vector<double> screen,
                double threshold, bool drop_degenerate) {
  run.cfg.set("run.trips", trips_path);
  if (screen.empty()) screen = run.cfg.get<std::vector<double>>("filter.screen_beta", {});
  if (screen.empty()) throw purc::UsageError("no screening beta (--screen-beta or filter.screen_beta)");
  run.cfg.set("filter.screen_beta", screen);
  if (threshold < 0.0) threshold = run.cfg.get<double>("filter.threshold", 0.95);
  run.cfg.set("filter.threshold", threshold);
  run.cfg.set("filter.drop_degenerate", drop_degenerate);
  const auto net = network(run.cfg);
  const auto trips = purc::io::load_trips(trips_path, net);
  const auto r = purc::filter_nonsensical(net, trips, beta_vector(screen, net, "screen beta"), threshold,
                                          perturbation(run.cfg), solver_options(run.cfg), c.jobs);
  std::vector<purc::Trip> kept = r.kept, discarded = r.discarded;
  json dropped = json::array();
  if (drop_degenerate) {
    auto od = purc::drop_degenerate_ods(kept);
    std::set<purc::DemandSpec> gone(od.dropped_ods.begin(), od.dropped_ods.end());
    for (const auto& t : kept)
      if (gone.count(t.od)) discarded.push_back(t);
    kept = std::move(od.kept);
    for (const auto& d : od.dropped_ods)
      dropped.push_back({{"origin", node_id(net, d.origin)}, {"destination", node_id(net, d.destination)}});
  }
  write_split(run, c, net, kept, discarded);
  std::size_t full = 0;
  for (double v : r.coverage) full += v >= 1.0;
  write_json(run, c.out, "summary.json",
             {{"input", trips.size()},
              {"kept", kept.size()},
              {"discarded", discarded.size()},
              {"threshold", threshold},
              {"screen_beta", screen},
              {"fully_covered", full},
              {"dropped_ods", dropped}});
}

struct BaselineArgs {
  std::string model = "mnl";
  std::string od;
  double beta_u = 2.0;
  double beta_ps = 1.1;
  std::string calibrate_to;
  bool joint = false;
  std::size_t max_routes = 10000;
};

void cmd_baseline(Run& run, const Common& c, const BaselineArgs& a) {
  run.cfg.set("run.od", a.od);
  run.cfg.set("baseline.model", a.model);
  run.cfg.set("baseline.beta_u", a.beta_u);
  run.cfg.set("baseline.beta_ps", a.beta_ps);
  run.cfg.set("baseline.joint", a.joint);
  if (!a.calibrate_to.empty()) run.cfg.set("baseline.calibrate_to", a.calibrate_to);
  const auto model = purc::parse_baseline_model(a.model);
  const auto net = network(run.cfg);
  const auto u = purc::link_utilities(net, beta(run.cfg, net));
  const auto rs = purc::enumerate_routes(net, u, parse_od(net, a.od), a.max_routes);
  double bu = a.beta_u, bps = model == purc::BaselineModel::kPSL ? a.beta_ps : 0.0;
  json out = {{"model", a.model}};
  if (!a.calibrate_to.empty()) {
    purc::CalibrationOptions co;
    co.joint = a.joint;
    const auto cal = purc::calibrate_to_flows(model, rs, purc::io::load_flows_csv(a.calibrate_to, net), co);
    bu = cal.beta_u;
    bps = cal.beta_ps;
    out["calibration_sse"] = cal.sse;
  }
  const auto p = model == purc::BaselineModel::kMNL ? purc::mnl_probabilities(rs, bu)
                                                     : purc::psl_probabilities(rs, bu, bps);
  out["beta_u"] = bu;
  if (model == purc::BaselineModel::kPSL) out["beta_ps"] = bps;
  json routes = json::array();
  for (std::size_t k = 0; k < rs.routes.size(); ++k) {
    json ids = json::array();
    for (auto e : rs.routes[k]) ids.push_back(net.link(e).id);
    const auto i = static_cast<Eigen::Index>(k);
    routes.push_back({{"links", ids}, {"probability", p.route[i]}, {"utility", rs.utility[i]},
                      {"length_km", rs.length[i]}});
  }
  out["routes"] = routes;
  write_json(run, c.out, "baseline.json", out);
  write_file(run, c.out, "baseline_flows.csv", [&](std::ostream& os) {
    os << "link_id,flow\n";
    os.precision(17);
    for (purc::LinkIndex e = 0; e < static_cast<purc::LinkIndex>(net.num_links()); ++e)
      os << net.link(e).id << ',' << p.link[e] << '\n';
  });
}

void cmd_sweep(Run& run, const Common& c, const std::string& od_arg, const std::vector<double>& grid,
               std::string coef) {
  run.cfg.set("run.od", od_arg);
  if (grid.empty()) throw purc::UsageError("--grid needs at least one value");
  run.cfg.set("sweep.grid", grid);
  const auto net = network(run.cfg);
  if (coef.empty()) coef = net.feature_names().at(0);
  run.cfg.set("sweep.coefficient", coef);
  const auto col = net.feature_column(coef);
  if (!col) throw purc::UsageError("sweep coefficient '" + coef + "' is not a model feature");
  std::vector<double> base = run.cfg.get<std::vector<double>>("beta", {});
  if (base.empty()) base.assign(net.num_features(), 0.0);
  const Eigen::VectorXd b0 = beta_vector(base, net, "beta");
  const auto od = parse_od(net, od_arg);
  const auto pert = perturbation(run.cfg);
  const auto opts = solver_options(run.cfg);
  std::vector<purc::FlowSolution> sols(grid.size());
  purc::detail::parallel_for(grid.size(), c.jobs, [&](std::size_t k) {
    Eigen::VectorXd b = b0;
    b[*col] = grid[k];
    sols[k] = purc::solve_flow(net, purc::link_utilities(net, b), od, pert, opts);
  });
  write_file(run, c.out, "sweep.csv", [&](std::ostream& os) {
    os << "beta,link_id,flow,active\n";
    os.precision(17);
    for (std::size_t k = 0; k < grid.size(); ++k)
      for (purc::LinkIndex e = 0; e < static_cast<purc::LinkIndex>(net.num_links()); ++e)
        os << grid[k] << ',' << net.link(e).id << ',' << sols[k].flows[e] << ','
           << int(sols[k].active[static_cast<std::size_t>(e)]) << '\n';
  });
  write_file(run, c.out, "sweep_stats.csv", [&](std::ostream& os) {
    os << "beta,active_links,active_km,expected_length_km,objective\n";
    os.precision(17);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      double km = 0.0;
      for (auto e : sols[k].active_links()) km += net.length(e);
      os << grid[k] << ',' << sols[k].num_active() << ',' << km << ','
         << net.lengths().dot(sols[k].flows) << ',' << sols[k].objective << '\n';
    }
  });
}

// ---- error reporting ----

int exit_code(purc::ErrorKind k) {
  switch (k) {
    case purc::ErrorKind::kUsage: return 2;
    case purc::ErrorKind::kData: return 3;
    case purc::ErrorKind::kNumerical: return 4;
  }
  return 4;
}

std::string kind_name(int code) {
  return code == 2 ? "usage" : code == 3 ? "data" : "numerical";
}

int report_error(Run& run, const std::string& out, int code, const std::string& message) {
  const json err = {{"error", {{"kind", kind_name(code)}, {"exit_code", code}, {"message", message}}}};
  std::cerr << err.dump() << '\n';
  if (!out.empty() && !run.command.empty()) {
    std::error_code ec;
    fs::create_directories(out, ec);
    std::ofstream(fs::path(out) / "error.json") << err.dump(2) << '\n';
    if (!ec) std::ofstream(fs::path(out) / "manifest.json") << manifest(run, "error").dump(2) << '\n';
  }
  return code;
}

void add_common(CLI::App* sub, Common& c, bool model_alias) {
  sub->add_option(model_alias ? "--config,--model" : "--config", c.configs,
                  "Config file(s) in TOML subset; later files override earlier ones")
      ->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "Override a config key: key=value (TOML value syntax)");
  sub->add_option("--network", c.network, "links.csv");
  sub->add_option("--perturbation", c.perturbation, "modified_entropy | quadratic");
  sub->add_option("--beta", c.beta, "Comma-separated coefficients")->delimiter(',');
  sub->add_option("--seed", c.seed, "Random seed")->check(CLI::NonNegativeNumber);
  sub->add_option("--jobs", c.jobs, "Worker threads for per-OD work (0 = all cores)");
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perturbed utility route choice toolkit"};
  app.set_version_flag("--version", std::string(PURC_VERSION));
  app.require_subcommand(1);
  Common c;
  Run run;
  for (int i = 1; i < argc; ++i) run.argv.emplace_back(argv[i]);

  auto* solve = app.add_subcommand("solve", "Solve the flow problem for one OD");
  std::string od;
  std::vector<std::string> deltas;
  solve->add_option("--od", od, "ORIGIN,DESTINATION")->required();
  solve->add_option("--delta", deltas, "Add VALUE to the utility rate of LINK (LINK:VALUE); repeatable");
  add_common(solve, c, true);

  auto* est = app.add_subcommand("estimate", "Estimate beta from observed trips");
  std::string trips;
  est->add_option("--trips", trips, "trips.jsonl")->required();
  add_common(est, c, true);

  auto* sim = app.add_subcommand("simulate", "Sample a synthetic trip dataset");
  std::string plan;
  sim->add_option("--plan", plan, "Simulation plan (TOML subset)")->check(CLI::ExistingFile);
  add_common(sim, c, true);

  auto* val = app.add_subcommand("validate", "Compare predicted and observed link flows");
  std::string fit;
  val->add_option("--trips", trips, "trips.jsonl")->required();
  val->add_option("--fit", fit, "fit.json from estimate (default: config beta)");
  add_common(val, c, true);

  auto* trim = app.add_subcommand("trim", "Trim trips to compact origin/destination sets");
  std::size_t n_o = 0, n_d = 0;
  trim->add_option("--trips", trips, "trips.jsonl")->required();
  trim->add_option("--n-origins", n_o, "Number of origin nodes")->required();
  trim->add_option("--n-destinations", n_d, "Number of destination nodes")->required();
  add_common(trim, c, true);

  auto* filter = app.add_subcommand("filter", "Drop trips poorly covered by a screening model");
  std::vector<double> screen;
  double threshold = -1.0;
  bool drop_degenerate = false;
  filter->add_option("--trips", trips, "trips.jsonl")->required();
  filter->add_option("--screen-beta", screen, "Screening coefficients")->delimiter(',');
  filter->add_option("--threshold", threshold, "Minimum covered utility share (default 0.95)");
  filter->add_flag("--drop-degenerate", drop_degenerate, "Also drop ODs whose trips all use the same links");
  add_common(filter, c, true);

  auto* base = app.add_subcommand("baseline", "Route-based MNL / path-size logit on a small network");
  BaselineArgs ba;
  base->add_option("--model", ba.model, "mnl | psl")->capture_default_str();
  base->add_option("--od", ba.od, "ORIGIN,DESTINATION")->required();
  base->add_option("--beta-u", ba.beta_u, "Utility scale")->capture_default_str();
  base->add_option("--beta-ps", ba.beta_ps, "Path-size coefficient")->capture_default_str();
  base->add_option("--calibrate-to", ba.calibrate_to, "flows.csv to fit by least squares");
  base->add_flag("--joint", ba.joint, "PSL: search beta_u and beta_ps jointly");
  base->add_option("--max-routes", ba.max_routes, "Route enumeration cap")->capture_default_str();
  add_common(base, c, false);

  auto* sweep = app.add_subcommand("sweep", "Solve one OD across a grid of coefficient values");
  std::vector<double> grid;
  std::string coef;
  sweep->add_option("--od", od, "ORIGIN,DESTINATION")->required();
  sweep->add_option("--grid", grid, "Comma-separated coefficient values")->delimiter(',')->required();
  sweep->add_option("--coef", coef, "Feature whose coefficient is varied (default: first)");
  add_common(sweep, c, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error(run, "", 2, e.what());
  }

  const auto t0 = Clock::now();
  try {
    run.command = app.get_subcommands().front()->get_name();
    fs::create_directories(c.out);
    fs::remove(fs::path(c.out) / "error.json");
    if (!plan.empty()) c.configs.push_back(plan);
    run.cfg = effective_config(c);
    if (run.command == "solve") cmd_solve(run, c, od, deltas);
    else if (run.command == "estimate") cmd_estimate(run, c, trips);
    else if (run.command == "simulate") cmd_simulate(run, c);
    else if (run.command == "validate") cmd_validate(run, c, trips, fit);
    else if (run.command == "trim") cmd_trim(run, c, trips, n_o, n_d);
    else if (run.command == "filter") cmd_filter(run, c, trips, screen, threshold, drop_degenerate);
    else if (run.command == "baseline") cmd_baseline(run, c, ba);
    else if (run.command == "sweep") cmd_sweep(run, c, od, grid, coef);
    const fs::path dir(c.out);
    write_file(run, dir, "config.toml", [&](std::ostream& os) { os << run.cfg.to_string(); });
    run.timings["total_seconds"] = seconds_since(t0);
    std::ofstream(dir / "manifest.json") << manifest(run, "ok").dump(2) << '\n';
    for (const auto& f : run.outputs) std::cout << (dir / f).string() << '\n';
    return 0;
  } catch (const purc::Error& e) {
    run.timings["total_seconds"] = seconds_since(t0);
    return report_error(run, c.out, exit_code(e.kind()), e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error(run, c.out, 3, e.what());
  } catch (const std::exception& e) {
    return report_error(run, c.out, 4, e.what());
  }
}
