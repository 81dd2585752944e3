#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <random>

#include "fixtures.hpp"
#include "purc/estimation.hpp"

namespace purc {
namespace {

constexpr auto kEntropy = Perturbation::kModifiedEntropy;

double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// ODs between opposite corners and edge midpoints of a rows x cols grid.
std::vector<DemandSpec> grid_ods(const Network& net, int rows, int cols, std::size_t count,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> r(0, rows - 1), c(0, cols - 1);
  std::vector<DemandSpec> out;
  while (out.size() < count) {
    const auto a = net.node_index("n" + std::to_string(r(rng)) + "_" + std::to_string(c(rng)));
    const auto b = net.node_index("n" + std::to_string(r(rng)) + "_" + std::to_string(c(rng)));
    if (a != b) out.push_back({a, b});
  }
  return out;
}

TEST(EmpiricalFlows, CountsTraversals) {
  const Network net({{"a", "O", "D", 1.0, {1.0}, std::nullopt},
                     {"b", "O", "D", 1.0, {1.0}, std::nullopt}},
                    {"one"});
  const DemandSpec d = make_demand(net, "O", "D");
  std::vector<Trip> trips = {{d, {0}}, {d, {0}}, {d, {1}}, {d, {0}}};
  const auto x = empirical_flows(net, trips, d);
  EXPECT_EQ(x.flows[0], 0.75);
  EXPECT_EQ(x.flows[1], 0.25);
  EXPECT_EQ(x.trip_count, 4);
  EXPECT_FALSE(x.identical_link_sets);

  trips = {{d, {1}}, {d, {1}}};
  const auto y = empirical_flows(net, trips, d);
  EXPECT_EQ(y.flows[0], 0.0);
  EXPECT_EQ(y.flows[1], 1.0);
  EXPECT_TRUE(y.identical_link_sets);
}

TEST(EmpiricalFlows, RejectsInvalidTrips) {
  const Network net = testing::toy_network();
  const DemandSpec od = make_demand(net, "O", "D");
  const std::vector<Trip> wrong_end = {{od, {1}}};
  EXPECT_THROW(empirical_flows(net, wrong_end, od), ValidationError);
  const std::vector<Trip> bad_link = {{od, {42}}};
  EXPECT_THROW(empirical_flows(net, bad_link, od), ValidationError);
  const std::vector<Trip> other_od = {{make_demand(net, "O", "M"), {1}}};
  EXPECT_THROW(empirical_flows(net, other_od, od), ValidationError);
}

TEST(BuildSelection, PositiveFlowsAndMinCount) {
  EmpiricalFlow x;
  x.flows = Eigen::Vector3d(0.75, 0.25, 0.0);
  x.counts = {3, 1, 0};
  x.trip_count = 4;
  EXPECT_EQ(build_selection(x), (std::vector<LinkIndex>{0, 1}));
  EXPECT_EQ(build_selection(x, {2}), (std::vector<LinkIndex>{0}));
  x.flows.setZero();
  EXPECT_THROW(build_selection(x), ValidationError);
}

TEST(Pseudoinverse, InvertibleMatrixGivesInverse) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd m(5, 5);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  m += 5.0 * Eigen::MatrixXd::Identity(5, 5);
  const Eigen::MatrixXd c = pseudoinverse(m);
  EXPECT_LE(max_abs(m * c - Eigen::MatrixXd::Identity(5, 5)), 1e-8);
}

TEST(Pseudoinverse, SingleLinkIsRankOne) {
  const Network net = testing::toy_network();
  const std::vector<LinkIndex> sel = {1};
  const auto c = reduced_pseudoinverse(net, sel);
  EXPECT_EQ(c.rank, 1);
  // Closed form for a single row a: a^T / |a|^2.
  const Eigen::MatrixXd expect = c.m.transpose() / c.m.squaredNorm();
  EXPECT_LE(max_abs(c.c - expect), 1e-12);
}

TEST(Pseudoinverse, ToyActiveSetSatisfiesPenrose) {
  const Network net = testing::toy_network();
  const std::vector<LinkIndex> sel = {0, 1, 2, 3};
  const auto c = reduced_pseudoinverse(net, sel);
  // Full-width B A^T with the untouched columns restored.
  const Eigen::MatrixXd a = incidence_matrix(net);
  Eigen::MatrixXd bat(4, a.rows());
  for (int i = 0; i < 4; ++i) bat.row(i) = a.col(sel[static_cast<std::size_t>(i)]).transpose();
  for (double r : penrose_residuals(bat, c.full_c(net.num_nodes()))) EXPECT_LE(r, 1e-8);
  for (double r : penrose_residuals(c.m, c.c)) EXPECT_LE(r, 1e-8);
  EXPECT_EQ(c.rank, 2);  // three nodes, one component
}

TEST(Pseudoinverse, AnnihilatesMultipliers) {
  const Network net = testing::random_network(120, 11);
  const auto u = link_utilities(net, Eigen::Vector2d(-1.0, -0.2));
  const auto sol = solve_flow(net, u, DemandSpec{0, 17}, kEntropy);
  const auto sel = build_selection(empirical_from_solution(sol));
  const auto c = reduced_pseudoinverse(net, sel);
  const Eigen::MatrixXd p = c.annihilator();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  for (int k = 0; k < 100; ++k) {
    Eigen::VectorXd lambda(c.m.cols());
    for (auto& v : lambda) v = 10.0 * n01(rng);
    ASSERT_LE(max_abs(p * (c.m * lambda)), 1e-8);
  }
}

TEST(RegressionRows, SingleLinkRowsVanish) {
  // A single selected row is always in the range of B A^T, so the transform
  // maps it to zero.
  const Network net = testing::toy_network();
  EmpiricalFlow x;
  x.demand = make_demand(net, "O", "D");
  x.flows = Eigen::VectorXd::Zero(6);
  x.flows[0] = 1.0;
  const std::vector<LinkIndex> sel = {0};
  const auto rows = build_regression_rows(net, x, sel, reduced_pseudoinverse(net, sel), kEntropy);
  ASSERT_EQ(rows.y.size(), 1);
  EXPECT_NEAR(rows.y[0], 0.0, 1e-15);
  EXPECT_NEAR(rows.w(0, 0), 0.0, 1e-15);
}

TEST(RegressionRows, ExactFlowsSatisfyModel) {
  const Network net = testing::grid_network(5, 5, 21);
  const Eigen::Vector2d beta(-1.3, -0.4);
  const auto u = link_utilities(net, beta);
  for (const auto& d : grid_ods(net, 5, 5, 5, 2)) {
    const auto x = empirical_from_solution(solve_flow(net, u, d, kEntropy));
    const auto sel = build_selection(x);
    const auto rows = build_regression_rows(net, x, sel, reduced_pseudoinverse(net, sel), kEntropy);
    EXPECT_EQ(rows.y.size(), static_cast<Eigen::Index>(sel.size()));
    EXPECT_LE(max_abs(rows.y - rows.w * beta), 1e-7);
  }
}

TEST(Estimate, ExactRecovery) {
  for (auto pert : {Perturbation::kModifiedEntropy, Perturbation::kQuadratic}) {
    const Network net = testing::grid_network(6, 6, 4);
    const Eigen::Vector2d beta(-1.5, -0.25);
    const auto u = link_utilities(net, beta);
    std::vector<EmpiricalFlow> flows;
    for (const auto& d : grid_ods(net, 6, 6, 12, 5))
      flows.push_back(empirical_from_solution(solve_flow(net, u, d, pert)));
    const auto est = estimate(net, flows, pert);
    EXPECT_LE((est.fit.beta - beta).cwiseAbs().maxCoeff(), 1e-5) << to_string(pert);
    Eigen::Index rows = 0;
    for (const auto& od : est.ods) rows += od.rows;
    EXPECT_EQ(rows, est.fit.n_obs);
  }
}

TEST(Estimate, IndependentOfThreadCount) {
  const Network net = testing::grid_network(5, 6, 8);
  const auto u = link_utilities(net, Eigen::Vector2d(-1.0, -0.5));
  std::vector<EmpiricalFlow> flows;
  for (const auto& d : grid_ods(net, 5, 6, 10, 9))
    flows.push_back(empirical_from_solution(solve_flow(net, u, d, kEntropy)));
  // Perturb to get nonzero residuals.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  for (auto& f : flows) f.flows = f.flows.unaryExpr([&](double v) { return v * jitter(rng); });
  EstimateOptions one, many;
  many.jobs = 4;
  const auto a = estimate(net, flows, kEntropy, one);
  const auto b = estimate(net, flows, kEntropy, many);
  EXPECT_EQ(a.fit.beta, b.fit.beta);
  EXPECT_EQ(a.fit.cov, b.fit.cov);
}

TEST(Estimate, DuplicatedOdsGiveSameBeta) {
  const Network net = testing::grid_network(4, 4, 2);
  const auto u = link_utilities(net, Eigen::Vector2d(-1.0, -0.5));
  std::vector<EmpiricalFlow> flows;
  for (const auto& d : grid_ods(net, 4, 4, 6, 3)) {
    auto f = empirical_from_solution(solve_flow(net, u, d, kEntropy));
    f.flows *= 1.05;
    flows.push_back(f);
  }
  auto doubled = flows;
  doubled.insert(doubled.end(), flows.begin(), flows.end());
  const auto a = estimate(net, flows, kEntropy);
  const auto b = estimate(net, doubled, kEntropy);
  EXPECT_LE((a.fit.beta - b.fit.beta).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(b.fit.n_obs, 2 * a.fit.n_obs);
}

TEST(Estimate, DropsIdenticalOds) {
  const Network net = testing::toy_network();
  const DemandSpec od = make_demand(net, "O", "D");
  const std::vector<Trip> trips = {{od, {0}}, {od, {0}}};
  const std::vector<EmpiricalFlow> flows = {empirical_flows(net, trips, od)};
  EXPECT_THROW(estimate(net, flows, kEntropy), ValidationError);
}

RegressionSystem synthetic(const Eigen::MatrixXd& w, const Eigen::VectorXd& y) {
  RegressionSystem s;
  s.w = w;
  s.y = y;
  s.group.resize(static_cast<std::size_t>(y.size()));
  for (std::size_t i = 0; i < s.group.size(); ++i) s.group[i] = static_cast<int>(i / 10);
  for (Eigen::Index k = 0; k < w.cols(); ++k) s.names.push_back("x" + std::to_string(k));
  return s;
}

TEST(OlsFit, NoiseFreeRecovery) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd w(50, 3);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n01(rng);
  const Eigen::Vector3d beta(-1.0, 0.5, 2.0);
  const auto fit = ols_fit(synthetic(w, w * beta));
  EXPECT_LE((fit.beta - beta).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(fit.r2, 1.0, 1e-12);
  EXPECT_NEAR(fit.adj_r2, 1.0, 1e-12);
}

TEST(OlsFit, ZeroResponse) {
  Eigen::MatrixXd w(4, 1);
  w << 1, 2, 3, 4;
  const auto fit = ols_fit(synthetic(w, Eigen::VectorXd::Zero(4)));
  EXPECT_EQ(fit.beta[0], 0.0);
  EXPECT_FALSE(fit.r2_defined);
  EXPECT_TRUE(std::isnan(fit.adj_r2));
}

TEST(OlsFit, Errors) {
  Eigen::MatrixXd w(4, 2);
  w << 1, 2, 2, 4, 3, 6, 4, 8;
  EXPECT_THROW(ols_fit(synthetic(w, Eigen::VectorXd::Ones(4))), NumericalError);
  EXPECT_THROW(ols_fit(synthetic(Eigen::MatrixXd::Ones(1, 2), Eigen::VectorXd::Ones(1))),
               ValidationError);
}

TEST(OlsFit, CovarianceIsSymmetricPsd) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd w(80, 3);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n01(rng);
  Eigen::VectorXd y = w * Eigen::Vector3d(1, 2, 3);
  for (auto& v : y) v += n01(rng);
  for (auto kind : {Covariance::kHC1, Covariance::kClassical, Covariance::kClusterOD}) {
    const auto fit = ols_fit(synthetic(w, y), kind);
    EXPECT_LE(max_abs(fit.cov - fit.cov.transpose()), 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.cov);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-14);
    EXPECT_EQ(fit.robust_se, fit.cov.diagonal().cwiseSqrt());
  }
}

// 200 replications of heteroscedastic data: the estimator is unbiased, and
// the HC1 standard error tracks the Monte Carlo spread.
TEST(OlsFit, MonteCarloUnbiasedHeteroscedastic) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> unif(0.5, 2.0);
  const Eigen::Vector2d beta(-1.5, 0.7);
  const int reps = 200, n = 100;
  Eigen::MatrixXd draws(reps, 2);
  double mean_se = 0.0;
  for (int r = 0; r < reps; ++r) {
    Eigen::MatrixXd w(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      w(i, 0) = unif(rng);
      w(i, 1) = n01(rng);
      y[i] = w.row(i) * beta + w(i, 0) * w(i, 0) * n01(rng);
    }
    const auto fit = ols_fit(synthetic(w, y));
    draws.row(r) = fit.beta.transpose();
    mean_se += fit.robust_se[0] / reps;
  }
  for (int k = 0; k < 2; ++k) {
    const double mean = draws.col(k).mean();
    const double sd = std::sqrt((draws.col(k).array() - mean).square().sum() / (reps - 1));
    EXPECT_LE(std::abs(mean - beta[k]), 2.0 * sd / std::sqrt(reps)) << "coefficient " << k;
    if (k == 0) {
      EXPECT_NEAR(mean_se / sd, 1.0, 0.2);
    }
  }
}

TEST(OlsFit, HC1MatchesClassicalUnderHomoscedasticity) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n01;
  double hc1 = 0.0, classical = 0.0;
  for (int r = 0; r < 200; ++r) {
    Eigen::MatrixXd w(200, 2);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n01(rng);
    Eigen::VectorXd y = w * Eigen::Vector2d(1.0, -1.0);
    for (auto& v : y) v += n01(rng);
    const auto s = synthetic(w, y);
    hc1 += ols_fit(s, Covariance::kHC1).cov(0, 0);
    classical += ols_fit(s, Covariance::kClassical).cov(0, 0);
  }
  EXPECT_NEAR(hc1 / classical, 1.0, 0.05);
}

}  // namespace
}  // namespace purc
