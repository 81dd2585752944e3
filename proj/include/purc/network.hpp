#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "purc/detail/csv.hpp"
#include "purc/error.hpp"

namespace purc {

/// Dense 0-based indices. Files use string ids; all math uses these.
using NodeIndex = std::int32_t;
using LinkIndex = std::int32_t;

struct Link {
  std::string id;
  std::string tail;
  std::string head;
  double length = 0.0;           // km
  std::vector<double> features;  // row z_e
  std::optional<std::string> road_type;
};

/// Directed road network. Immutable after construction.
class Network {
 public:
  Network() = default;

  Network(std::vector<Link> links, std::vector<std::string> feature_names)
      : links_(std::move(links)), feature_names_(std::move(feature_names)) {
    build();
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_links() const { return links_.size(); }
  std::size_t num_features() const { return feature_names_.size(); }

  const std::vector<std::string>& nodes() const { return nodes_; }
  const std::vector<Link>& links() const { return links_; }
  const Link& link(LinkIndex e) const { return links_[static_cast<std::size_t>(e)]; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }

  NodeIndex tail(LinkIndex e) const { return tails_[static_cast<std::size_t>(e)]; }
  NodeIndex head(LinkIndex e) const { return heads_[static_cast<std::size_t>(e)]; }
  double length(LinkIndex e) const { return lengths_[e]; }
  const Eigen::VectorXd& lengths() const { return lengths_; }

  /// Link-feature matrix z, one row per link.
  const Eigen::MatrixXd& features() const { return z_; }

  std::span<const LinkIndex> out_links(NodeIndex v) const {
    return out_[static_cast<std::size_t>(v)];
  }
  std::span<const LinkIndex> in_links(NodeIndex v) const {
    return in_[static_cast<std::size_t>(v)];
  }

  std::optional<NodeIndex> find_node(const std::string& id) const {
    auto it = node_index_.find(id);
    if (it == node_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<LinkIndex> find_link(const std::string& id) const {
    auto it = link_index_.find(id);
    if (it == link_index_.end()) return std::nullopt;
    return it->second;
  }
  NodeIndex node_index(const std::string& id) const {
    if (auto v = find_node(id)) return *v;
    throw ValidationError("unknown node id '" + id + "'");
  }
  LinkIndex link_index(const std::string& id) const {
    if (auto e = find_link(id)) return *e;
    throw ValidationError("unknown link id '" + id + "'");
  }
  std::optional<int> feature_column(const std::string& name) const {
    auto it = std::find(feature_names_.begin(), feature_names_.end(), name);
    if (it == feature_names_.end()) return std::nullopt;
    return static_cast<int>(it - feature_names_.begin());
  }

 private:
  void build() {
    const std::size_t p = feature_names_.size();
    lengths_.resize(static_cast<Eigen::Index>(links_.size()));
    z_.resize(static_cast<Eigen::Index>(links_.size()), static_cast<Eigen::Index>(p));
    auto intern = [this](const std::string& id) {
      auto [it, inserted] =
          node_index_.try_emplace(id, static_cast<NodeIndex>(nodes_.size()));
      if (inserted) nodes_.push_back(id);
      return it->second;
    };
    for (std::size_t e = 0; e < links_.size(); ++e) {
      const Link& l = links_[e];
      if (l.tail == l.head)
        throw ValidationError("link '" + l.id + "' is a self-loop at node '" + l.tail + "'");
      if (!(l.length > 0.0))
        throw ValidationError("link '" + l.id + "' has nonpositive length");
      if (l.features.size() != p)
        throw ValidationError("link '" + l.id + "' has " + std::to_string(l.features.size()) +
                              " features, expected " + std::to_string(p));
      if (!link_index_.try_emplace(l.id, static_cast<LinkIndex>(e)).second)
        throw ValidationError("duplicate link id '" + l.id + "'");
      tails_.push_back(intern(l.tail));
      heads_.push_back(intern(l.head));
      lengths_[static_cast<Eigen::Index>(e)] = l.length;
      for (std::size_t k = 0; k < p; ++k)
        z_(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(k)) = l.features[k];
    }
    out_.assign(nodes_.size(), {});
    in_.assign(nodes_.size(), {});
    for (std::size_t e = 0; e < links_.size(); ++e) {
      out_[static_cast<std::size_t>(tails_[e])].push_back(static_cast<LinkIndex>(e));
      in_[static_cast<std::size_t>(heads_[e])].push_back(static_cast<LinkIndex>(e));
    }
  }

  std::vector<Link> links_;
  std::vector<std::string> feature_names_;
  std::vector<std::string> nodes_;
  std::unordered_map<std::string, NodeIndex> node_index_;
  std::unordered_map<std::string, LinkIndex> link_index_;
  std::vector<NodeIndex> tails_;
  std::vector<NodeIndex> heads_;
  Eigen::VectorXd lengths_;
  Eigen::MatrixXd z_;
  std::vector<std::vector<LinkIndex>> out_;
  std::vector<std::vector<LinkIndex>> in_;
};

/// One origin-destination pair with unit demand.
struct DemandSpec {
  NodeIndex origin = 0;
  NodeIndex destination = 0;

  friend bool operator==(const DemandSpec&, const DemandSpec&) = default;
  friend auto operator<=>(const DemandSpec&, const DemandSpec&) = default;
};

inline DemandSpec make_demand(const Network& net, const std::string& origin,
                              const std::string& destination) {
  DemandSpec d{net.node_index(origin), net.node_index(destination)};
  if (d.origin == d.destination)
    throw ValidationError("origin and destination coincide at '" + origin + "'");
  return d;
}

inline void check_demand(const Network& net, const DemandSpec& d) {
  const auto n = static_cast<NodeIndex>(net.num_nodes());
  if (d.origin < 0 || d.origin >= n || d.destination < 0 || d.destination >= n)
    throw ValidationError("demand refers to a node outside the network");
  if (d.origin == d.destination) throw ValidationError("origin and destination coincide");
}

/// Per-link utility rates u = z*beta. Every entry is strictly negative.
class UtilityRates {
 public:
  explicit UtilityRates(Eigen::VectorXd u) : u_(std::move(u)) {
    for (Eigen::Index e = 0; e < u_.size(); ++e)
      if (!(u_[e] < 0.0))
        throw ValidationError("utility rate of link " + std::to_string(e) +
                              " is not negative (" + std::to_string(u_[e]) + ")");
  }
  const Eigen::VectorXd& values() const { return u_; }
  double operator[](LinkIndex e) const { return u_[e]; }
  Eigen::Index size() const { return u_.size(); }

 private:
  Eigen::VectorXd u_;
};

/// Node-by-link incidence matrix: -1 where a link leaves a node, +1 where it enters.
inline Eigen::SparseMatrix<double> incidence_matrix(const Network& net) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(2 * net.num_links());
  for (LinkIndex e = 0; e < static_cast<LinkIndex>(net.num_links()); ++e) {
    t.emplace_back(net.tail(e), e, -1.0);
    t.emplace_back(net.head(e), e, 1.0);
  }
  Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(net.num_nodes()),
                                static_cast<Eigen::Index>(net.num_links()));
  a.setFromTriplets(t.begin(), t.end());
  return a;
}

inline Eigen::VectorXd demand_vector(const Network& net, const DemandSpec& d) {
  check_demand(net, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_nodes()));
  b[d.origin] = -1.0;
  b[d.destination] = 1.0;
  return b;
}

inline UtilityRates link_utilities(const Network& net, const Eigen::VectorXd& beta) {
  if (beta.size() != static_cast<Eigen::Index>(net.num_features()))
    throw ValidationError("beta has " + std::to_string(beta.size()) +
                          " entries but the network has " +
                          std::to_string(net.num_features()) + " features");
  return UtilityRates(net.features() * beta);
}

/// Replace one link by two links through a fresh node. Both halves keep the
/// feature row and road type of the original.
inline Network split_link(const Network& net, const std::string& link_id, double fraction) {
  const LinkIndex target = net.link_index(link_id);
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ValidationError("split fraction must lie strictly inside (0, 1)");
  const Link& orig = net.link(target);
  std::string mid = orig.id + "~split";
  while (net.find_node(mid)) mid += "'";
  std::string first_id = orig.id + "/a";
  std::string second_id = orig.id + "/b";
  while (net.find_link(first_id) || net.find_link(second_id)) {
    first_id += "'";
    second_id += "'";
  }

  std::vector<Link> links;
  links.reserve(net.num_links() + 1);
  for (LinkIndex e = 0; e < static_cast<LinkIndex>(net.num_links()); ++e) {
    if (e != target) {
      links.push_back(net.link(e));
      continue;
    }
    Link a = orig;
    a.id = first_id;
    a.head = mid;
    a.length = fraction * orig.length;
    Link b = orig;
    b.id = second_id;
    b.tail = mid;
    b.length = orig.length - a.length;
    links.push_back(std::move(a));
    links.push_back(std::move(b));
  }
  return Network(std::move(links), net.feature_names());
}

/// Intersection indicator divided by length: 1{out-degree(head) >= 2} / l_e.
/// Multiplied by l_e in the utility it contributes a per-link constant.
inline Eigen::VectorXd outlink_feature(const Network& net) {
  Eigen::VectorXd f(static_cast<Eigen::Index>(net.num_links()));
  for (LinkIndex e = 0; e < static_cast<LinkIndex>(net.num_links()); ++e) {
    const bool junction = net.out_links(net.head(e)).size() >= 2;
    f[e] = junction ? 1.0 / net.length(e) : 0.0;
  }
  return f;
}

/// Declarative model specification: which columns form z.
///
/// Each term is one of
///   `<column>`            a numeric column of links.csv
///   `outlinks`            the outlink indicator (see outlink_feature)
///   `<column>@<type>`     column interacted with a road-type dummy
///   `const`               the constant 1
struct FeatureSpec {
  std::vector<std::string> terms;
};

inline Network apply_features(const Network& raw, const FeatureSpec& spec) {
  if (spec.terms.empty()) return raw;
  const auto m = static_cast<Eigen::Index>(raw.num_links());
  Eigen::MatrixXd z(m, static_cast<Eigen::Index>(spec.terms.size()));
  const Eigen::VectorXd outlinks = outlink_feature(raw);
  for (std::size_t k = 0; k < spec.terms.size(); ++k) {
    const std::string& term = spec.terms[k];
    const auto col = static_cast<Eigen::Index>(k);
    if (term == "outlinks") {
      z.col(col) = outlinks;
    } else if (term == "const") {
      z.col(col).setOnes();
    } else if (auto at = term.find('@'); at != std::string::npos) {
      const std::string name = term.substr(0, at);
      const std::string type = term.substr(at + 1);
      auto src = raw.feature_column(name);
      if (!src) throw UsageError("feature term '" + term + "': no column '" + name + "'");
      for (Eigen::Index e = 0; e < m; ++e) {
        const auto& rt = raw.link(static_cast<LinkIndex>(e)).road_type;
        z(e, col) = (rt && *rt == type) ? raw.features()(e, *src) : 0.0;
      }
    } else {
      auto src = raw.feature_column(term);
      if (!src) throw UsageError("feature term '" + term + "': no such column");
      z.col(col) = raw.features().col(*src);
    }
  }
  std::vector<Link> links = raw.links();
  for (std::size_t e = 0; e < links.size(); ++e) {
    auto row = z.row(static_cast<Eigen::Index>(e));
    links[e].features.assign(row.begin(), row.end());
  }
  return Network(std::move(links), spec.terms);
}

/// Parse links.csv: `link_id,tail,head,length_km,road_type,<features...>`.
inline Network read_network_csv(std::istream& in, const std::string& source) {
  const auto table = detail::read_csv(in, source);
  const std::vector<std::string> fixed = {"link_id", "tail", "head", "length_km", "road_type"};
  if (table.header.size() < fixed.size() ||
      !std::equal(fixed.begin(), fixed.end(), table.header.begin()))
    throw ParseError(source + ": header must start with link_id,tail,head,length_km,road_type");
  std::vector<std::string> names(table.header.begin() + 5, table.header.end());
  std::vector<Link> links;
  links.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = source + ":" + std::to_string(table.line_numbers[r]);
    Link l;
    l.id = row[0];
    l.tail = row[1];
    l.head = row[2];
    if (l.id.empty() || l.tail.empty() || l.head.empty())
      throw ParseError(where + ": empty id field");
    l.length = detail::parse_double(row[3], where);
    if (!row[4].empty()) l.road_type = row[4];
    for (std::size_t k = 5; k < row.size(); ++k)
      l.features.push_back(detail::parse_double(row[k], where));
    links.push_back(std::move(l));
  }
  try {
    return Network(std::move(links), std::move(names));
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
}

inline Network load_network(const std::string& path, const FeatureSpec& spec = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open network file " + path);
  return apply_features(read_network_csv(in, path), spec);
}

struct DemandRow {
  DemandSpec od;
  long long trip_count = 0;
};

/// Parse demand.csv: `origin,destination,trip_count`.
inline std::vector<DemandRow> load_demand(const Network& net, const std::string& path) {
  const auto table = detail::read_csv_file(path);
  if (table.header != std::vector<std::string>{"origin", "destination", "trip_count"})
    throw ParseError(path + ": header must be origin,destination,trip_count");
  std::vector<DemandRow> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string where = path + ":" + std::to_string(table.line_numbers[r]);
    DemandRow d;
    d.od = make_demand(net, table.rows[r][0], table.rows[r][1]);
    d.trip_count = detail::parse_int(table.rows[r][2], where);
    if (d.trip_count < 0) throw ValidationError(where + ": negative trip_count");
    out.push_back(d);
  }
  return out;
}

}  // namespace purc
