#pragma once

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "purc/network.hpp"

namespace purc::testing {

// Six-link network used throughout the examples: links 1 and 6 go O->D,
// link 2 O->M, links 3 and 4 M->D, link 5 M->O. Feature "cost" gives
// u = -cost under beta = (-1).
inline Network toy_network(double l2 = 1.0, double l34 = 1.0, double cost6 = 2.0) {
  std::vector<Link> links = {
      {"1", "O", "D", 2.0, {1.0}, std::nullopt},
      {"2", "O", "M", l2, {1.0}, std::nullopt},
      {"3", "M", "D", l34, {1.0}, std::nullopt},
      {"4", "M", "D", l34, {1.0}, std::nullopt},
      {"5", "M", "O", l2, {1.0}, std::nullopt},
      {"6", "O", "D", 2.0, {cost6}, std::nullopt},
  };
  return Network(std::move(links), {"cost"});
}

inline Eigen::VectorXd toy_beta() { return Eigen::VectorXd::Constant(1, -1.0); }

inline const std::vector<std::string>& road_types() {
  static const std::vector<std::string> types = {"motorway", "urban", "rural"};
  return types;
}

// rows x cols grid of two-way streets with a random pace (min/km) and road
// type per street. Features: pace, const.
inline Network grid_network(int rows, int cols, std::uint64_t seed,
                            double min_len = 0.3, double max_len = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> len(min_len, max_len);
  std::uniform_real_distribution<double> pace(1.0, 3.0);
  std::uniform_int_distribution<int> type(0, 2);
  auto node = [](int r, int c) { return "n" + std::to_string(r) + "_" + std::to_string(c); };
  std::vector<Link> links;
  auto add_pair = [&](const std::string& a, const std::string& b) {
    const double l = len(rng);
    const double p = pace(rng);
    const std::string t = road_types()[static_cast<std::size_t>(type(rng))];
    links.push_back({a + ">" + b, a, b, l, {p, 1.0}, t});
    links.push_back({b + ">" + a, b, a, l, {p, 1.0}, t});
  };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) add_pair(node(r, c), node(r, c + 1));
      if (r + 1 < rows) add_pair(node(r, c), node(r + 1, c));
    }
  return Network(std::move(links), {"pace", "const"});
}

// Strongly connected random digraph with `num_links` links (at least the
// ring), random lengths and one positive feature.
inline Network random_network(int num_links, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int n = std::max(3, num_links / 3);
  std::uniform_real_distribution<double> len(0.1, 2.0);
  std::uniform_real_distribution<double> feat(0.5, 3.0);
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<Link> links;
  auto name = [](int v) { return "v" + std::to_string(v); };
  for (int v = 0; v < n; ++v)
    links.push_back({"e" + std::to_string(links.size()), name(v), name((v + 1) % n), len(rng),
                     {feat(rng), 1.0}, std::nullopt});
  while (static_cast<int>(links.size()) < num_links) {
    const int a = pick(rng), b = pick(rng);
    if (a == b) continue;
    links.push_back({"e" + std::to_string(links.size()), name(a), name(b), len(rng),
                     {feat(rng), 1.0}, std::nullopt});
  }
  return Network(std::move(links), {"pace", "const"});
}

}  // namespace purc::testing
