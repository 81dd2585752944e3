#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "purc/detail/csv.hpp"
#include "purc/error.hpp"
#include "purc/estimation.hpp"
#include "purc/network.hpp"
#include "purc/solver.hpp"
#include "purc/trip.hpp"
#include "purc/validation.hpp"

namespace purc::io {

using json = nlohmann::ordered_json;

// ---- trips.jsonl: {"origin":..,"destination":..,"links":[..]} per line ----

inline json trip_to_json(const Network& net, const Trip& t) {
  json links = json::array();
  for (LinkIndex e : t.links) links.push_back(net.link(e).id);
  return {{"origin", net.nodes()[static_cast<std::size_t>(t.od.origin)]},
          {"destination", net.nodes()[static_cast<std::size_t>(t.od.destination)]},
          {"links", std::move(links)}};
}

inline void write_trips(std::ostream& os, const Network& net, std::span<const Trip> trips) {
  for (const Trip& t : trips) os << trip_to_json(net, t).dump() << '\n';
}

inline std::vector<Trip> read_trips(std::istream& in, const Network& net, const std::string& source) {
  std::vector<Trip> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::string(detail::trim(line)).empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      Trip t = make_trip(net, j.at("links").get<std::vector<std::string>>());
      if (j.contains("origin") && net.node_index(j["origin"].get<std::string>()) != t.od.origin)
        throw ValidationError("origin does not match the first link");
      if (j.contains("destination") &&
          net.node_index(j["destination"].get<std::string>()) != t.od.destination)
        throw ValidationError("destination does not match the last link");
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Trip> load_trips(const std::string& path, const Network& net) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trips file " + path);
  return read_trips(in, net, path);
}

// ---- flows.csv: link_id,flow,active ----

inline void write_flows_csv(std::ostream& os, const Network& net, const FlowSolution& sol) {
  os << "link_id,flow,active\n";
  os.precision(17);
  for (LinkIndex e = 0; e < static_cast<LinkIndex>(net.num_links()); ++e)
    os << net.link(e).id << ',' << sol.flows[e] << ',' << int(sol.active[static_cast<std::size_t>(e)])
       << '\n';
}

/// Read the flow column of a flows.csv back into link order.
inline Eigen::VectorXd load_flows_csv(const std::string& path, const Network& net) {
  const auto table = detail::read_csv_file(path);
  if (table.header.size() < 2 || table.header[0] != "link_id" || table.header[1] != "flow")
    throw ParseError(path + ": header must start with link_id,flow");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_links()));
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    x[net.link_index(table.rows[r][0])] =
        detail::parse_double(table.rows[r][1], path + ":" + std::to_string(table.line_numbers[r]));
  return x;
}

// ---- fit.json ----

inline json fit_to_json(const Network& net, const Estimate& est, Perturbation pert) {
  const FitResult& f = est.fit;
  json beta = json::object(), se = json::object();
  for (std::size_t k = 0; k < est.system.names.size(); ++k) {
    beta[est.system.names[k]] = f.beta[static_cast<Eigen::Index>(k)];
    se[est.system.names[k]] = f.robust_se[static_cast<Eigen::Index>(k)];
  }
  json cov = json::array();
  for (Eigen::Index i = 0; i < f.cov.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < f.cov.cols(); ++j) row.push_back(f.cov(i, j));
    cov.push_back(std::move(row));
  }
  json ods = json::array();
  for (const auto& d : est.ods) {
    json o = {{"origin", net.nodes()[static_cast<std::size_t>(d.demand.origin)]},
              {"destination", net.nodes()[static_cast<std::size_t>(d.demand.destination)]},
              {"trips", d.trip_count},
              {"rows", d.rows},
              {"rank", d.rank}};
    if (!d.dropped.empty()) o["dropped"] = d.dropped;
    ods.push_back(std::move(o));
  }
  auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"perturbation", to_string(pert)},
          {"features", est.system.names},
          {"beta", beta},
          {"robust_se", se},
          {"covariance", to_string(f.covariance)},
          {"cov", cov},
          {"r2", finite_or_null(f.r2)},
          {"adj_r2", finite_or_null(f.adj_r2)},
          {"n_obs", f.n_obs},
          {"n_ods_used", std::count_if(est.ods.begin(), est.ods.end(),
                                       [](const auto& d) { return d.dropped.empty(); })},
          {"ods", ods}};
}

/// Beta vector in the order of `features` from a fit.json.
inline Eigen::VectorXd load_fit_beta(const std::string& path, const std::vector<std::string>& features) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open fit file " + path);
  try {
    const json j = json::parse(in);
    Eigen::VectorXd beta(static_cast<Eigen::Index>(features.size()));
    for (std::size_t k = 0; k < features.size(); ++k)
      beta[static_cast<Eigen::Index>(k)] = j.at("beta").at(features[k]).get<double>();
    return beta;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// ---- validation outputs ----

inline json report_to_json(const ValidationReport& r) {
  const auto& u = r.unused;
  return {{"num_ods", r.num_ods},
          {"num_trips", r.outside_shares.size()},
          {"adj_r2", r.adj_r2.value},
          {"adj_r2_alternative", r.adj_r2.alternative},
          {"adj_r2_divergent", r.adj_r2.divergent},
          {"sse", r.adj_r2.sse},
          {"sst", r.adj_r2.sst},
          {"fully_covered_share", r.fully_covered},
          {"unused_links",
           {{"predicted", u.predicted_unused},
            {"observed", u.observed_unused},
            {"both", u.both_unused},
            {"overlap_jaccard", u.jaccard},
            {"overlap_share_of_predicted", u.share_of_predicted},
            {"overlap_share_of_observed", u.share_of_observed},
            {"predicted_km", u.predicted_unused_km},
            {"observed_km", u.observed_unused_km}}}};
}

inline void write_flows_scatter_csv(std::ostream& os, const Network& net, const ValidationReport& r) {
  os << "link_id,observed,predicted\n";
  os.precision(17);
  for (LinkIndex e = 0; e < static_cast<LinkIndex>(net.num_links()); ++e)
    os << net.link(e).id << ',' << r.observed[e] << ',' << r.predicted[e] << '\n';
}

/// Empirical CDF of the per-trip outside-utility shares.
inline void write_outside_cdf_csv(std::ostream& os, const ValidationReport& r) {
  std::vector<double> s = r.outside_shares;
  std::sort(s.begin(), s.end());
  os << "outside_share,cdf\n";
  os.precision(17);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i + 1 < s.size() && s[i + 1] == s[i]) continue;
    os << s[i] << ',' << static_cast<double>(i + 1) / static_cast<double>(s.size()) << '\n';
  }
}

}  // namespace purc::io
