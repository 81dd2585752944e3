#pragma once

#include <string>
#include <vector>

#include "purc/error.hpp"
#include "purc/network.hpp"

namespace purc {

/// One journey, observed or simulated, as a connected link sequence.
struct Trip {
  DemandSpec od;
  std::vector<LinkIndex> links;

  friend bool operator==(const Trip&, const Trip&) = default;
};

/// Node sequence visited by the trip, origin first.
inline std::vector<NodeIndex> trip_nodes(const Network& net, const Trip& t) {
  std::vector<NodeIndex> nodes;
  nodes.reserve(t.links.size() + 1);
  nodes.push_back(t.links.empty() ? t.od.origin : net.tail(t.links.front()));
  for (LinkIndex e : t.links) nodes.push_back(net.head(e));
  return nodes;
}

/// Throws ValidationError unless the links exist, are consecutive and connect
/// the trip's origin to its destination.
inline void check_trip(const Network& net, const Trip& t) {
  check_demand(net, t.od);
  if (t.links.empty()) throw ValidationError("trip has no links");
  const auto m = static_cast<LinkIndex>(net.num_links());
  for (LinkIndex e : t.links)
    if (e < 0 || e >= m) throw ValidationError("trip refers to a nonexistent link");
  for (std::size_t i = 1; i < t.links.size(); ++i)
    if (net.head(t.links[i - 1]) != net.tail(t.links[i]))
      throw ValidationError("trip links '" + net.link(t.links[i - 1]).id + "' and '" +
                            net.link(t.links[i]).id + "' are not consecutive");
  if (net.tail(t.links.front()) != t.od.origin || net.head(t.links.back()) != t.od.destination)
    throw ValidationError("trip endpoints do not match its origin and destination");
}

/// Build a trip from link ids; the OD is taken from the first and last link.
inline Trip make_trip(const Network& net, const std::vector<std::string>& link_ids) {
  if (link_ids.empty()) throw ValidationError("trip has no links");
  Trip t;
  for (const auto& id : link_ids) t.links.push_back(net.link_index(id));
  t.od = DemandSpec{net.tail(t.links.front()), net.head(t.links.back())};
  check_trip(net, t);
  return t;
}

}  // namespace purc
