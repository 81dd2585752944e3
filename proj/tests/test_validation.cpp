#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "purc/simulate.hpp"
#include "purc/validation.hpp"

namespace purc {
namespace {

constexpr auto kEntropy = Perturbation::kModifiedEntropy;

TEST(AggregatePredictedFlows, ScalesByTripCount) {
  const Network net = testing::toy_network();
  const DemandSpec od = make_demand(net, "O", "D");
  const std::vector<DemandRow> ten = {{od, 10}};
  const auto total = aggregate_predicted_flows(net, testing::toy_beta(), ten, kEntropy);
  EXPECT_NEAR(total[1], 5.76, 0.01);
  const std::vector<DemandRow> none = {{od, 0}};
  EXPECT_EQ(aggregate_predicted_flows(net, testing::toy_beta(), none, kEntropy),
            Eigen::VectorXd::Zero(6));
}

TEST(AggregatePredictedFlows, AdditiveOverOds) {
  const Network net = testing::grid_network(4, 4, 2);
  const Eigen::Vector2d beta(-1.0, -0.3);
  const DemandRow a{make_demand(net, "n0_0", "n3_3"), 4}, b{make_demand(net, "n0_3", "n3_1"), 7};
  const std::vector<DemandRow> both = {a, b}, only_a = {a}, only_b = {b};
  const auto sum = aggregate_predicted_flows(net, beta, both, kEntropy, {}, 2);
  const Eigen::VectorXd parts = aggregate_predicted_flows(net, beta, only_a, kEntropy) +
                     aggregate_predicted_flows(net, beta, only_b, kEntropy);
  EXPECT_LE((sum - parts).cwiseAbs().maxCoeff(), 1e-12);
  const std::vector<DemandRow> doubled = {{a.od, 8}};
  EXPECT_LE((aggregate_predicted_flows(net, beta, doubled, kEntropy) -
             2.0 * aggregate_predicted_flows(net, beta, only_a, kEntropy))
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
}

TEST(PredictionAdjR2, PerfectFitIsOne) {
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(30, 0.0, 29.0);
  const auto r = prediction_adj_r2(x, x, 9);
  EXPECT_EQ(r.value, 1.0);
  // The alternative arrangement gives 1 - (N-1)/(N+p-1) here.
  EXPECT_NEAR(r.alternative, 1.0 - 29.0 / 38.0, 1e-15);
  EXPECT_TRUE(r.divergent);
}

TEST(PredictionAdjR2, HandComputedFixture) {
  Eigen::VectorXd obs(5), pred(5);
  obs << 1, 2, 3, 4, 5;
  pred << 1.1, 1.9, 3.2, 3.8, 5.0;
  const auto r = prediction_adj_r2(obs, pred, 1);
  // SSE = 0.01 + 0.01 + 0.04 + 0.04 + 0 = 0.1, SST = 10.
  EXPECT_NEAR(r.sse, 0.1, 1e-15);
  EXPECT_NEAR(r.sst, 10.0, 1e-15);
  EXPECT_NEAR(r.value, 1.0 - 0.01 * 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.alternative, 1.0 - 0.99 * 4.0 / 5.0, 1e-15);
}

TEST(PredictionAdjR2, MeanPredictionIsAboutZero) {
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(1000, 0.0, 1.0);
  const Eigen::VectorXd m = Eigen::VectorXd::Constant(1000, x.mean());
  EXPECT_NEAR(prediction_adj_r2(x, m, 3).value, 0.0, 0.01);
  EXPECT_THROW(prediction_adj_r2(Eigen::VectorXd::Ones(10), m.head(10), 1), ValidationError);
  EXPECT_THROW(prediction_adj_r2(x.head(3), x.head(3), 2), ValidationError);
}

TEST(OutsideUtilityShare, Fixtures) {
  const Network net = testing::toy_network();
  const auto u = link_utilities(net, testing::toy_beta());
  const std::vector<char> active = {1, 1, 1, 1, 0, 0};
  EXPECT_EQ(outside_utility_share(net, make_trip(net, {"2", "3"}), active, u), 0.0);
  EXPECT_EQ(outside_utility_share(net, make_trip(net, {"6"}), active, u), 1.0);
  // Links 2 and 5 both carry l|u| = 1.
  const Trip half = make_trip(net, {"2", "5", "1"});
  EXPECT_EQ(outside_utility_share(net, half, active, u), 0.25);
  const std::vector<char> two_of_four = {0, 1, 1, 1, 1, 0};
  EXPECT_EQ(outside_utility_share(net, half, two_of_four, u), 0.5);
}

TEST(OutsideUtilityShare, InvariantToBetaScale) {
  const Network net = testing::grid_network(5, 5, 8);
  const DemandSpec od = make_demand(net, "n0_0", "n4_4");
  const Eigen::Vector2d beta(-1.0, -0.2);
  const auto u1 = link_utilities(net, beta);
  const auto u2 = link_utilities(net, 3.0 * beta);
  const auto sol = solve_flow(net, u1, od, kEntropy);
  auto g = rng::substream(4, 0, 0);
  // Trips drawn from a flatter model so some leave the active set.
  const auto wide = solve_flow(net, link_utilities(net, 0.2 * beta), od, kEntropy);
  for (int i = 0; i < 20; ++i) {
    const Trip t = sample_trip(net, wide, g);
    EXPECT_DOUBLE_EQ(outside_utility_share(net, t, sol.active, u1),
                     outside_utility_share(net, t, sol.active, u2));
  }
}

TEST(UnusedLinkStats, SetArithmetic) {
  const Network net({{"a", "X", "Y", 1.0, {1.0}, std::nullopt},
                     {"b", "Y", "Z", 2.0, {1.0}, std::nullopt},
                     {"c", "Z", "W", 3.0, {1.0}, std::nullopt},
                     {"d", "W", "V", 4.0, {1.0}, std::nullopt},
                     {"e", "V", "U", 5.0, {1.0}, std::nullopt}},
                    {"one"});
  Eigen::VectorXd pred(5), obs(5);
  pred << 0, 0, 0, 1, 1;
  obs << 1, 0, 0, 0, 1;
  const auto s = unused_link_stats(pred, obs, net);
  EXPECT_EQ(s.jaccard, 0.5);
  EXPECT_DOUBLE_EQ(s.share_of_predicted, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.share_of_observed, 2.0 / 3.0);
  EXPECT_EQ(s.predicted_unused_km, 6.0);
  EXPECT_EQ(s.observed_unused_km, 9.0);
  EXPECT_EQ(unused_link_stats(pred, pred, net).jaccard, 1.0);
  Eigen::VectorXd flip = (pred.array() == 0.0).cast<double>();
  EXPECT_EQ(unused_link_stats(pred, flip, net).jaccard, 0.0);
}

TEST(Validate, ReportIsPopulated) {
  const Network net = testing::grid_network(5, 5, 17);
  SimulationPlan plan;
  plan.ods = {make_demand(net, "n0_0", "n4_4"), make_demand(net, "n4_0", "n0_4"),
              make_demand(net, "n2_0", "n2_4")};
  plan.trips_per_od = 200;
  plan.beta = Eigen::Vector2d(-1.5, -0.2);
  plan.seed = 11;
  const auto trips = simulate_dataset(net, plan, kEntropy);
  const auto r = validate(net, plan.beta, trips, kEntropy);
  EXPECT_EQ(r.num_ods, 3u);
  EXPECT_EQ(r.outside_shares.size(), trips.size());
  // Trips are drawn from the predicted active sets.
  EXPECT_EQ(r.fully_covered, 1.0);
  EXPECT_GT(r.adj_r2.value, 0.9);
  EXPECT_NEAR(r.observed.sum(), r.predicted.sum(), 0.05 * r.observed.sum());
  EXPECT_GE(r.unused.jaccard, 0.0);
  EXPECT_LE(r.unused.jaccard, 1.0);
}

}  // namespace
}  // namespace purc
