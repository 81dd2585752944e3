#include <gtest/gtest.h>

#include <cmath>

#include "purc/perturbation.hpp"

namespace purc {
namespace {

constexpr Perturbation kBoth[] = {Perturbation::kModifiedEntropy, Perturbation::kQuadratic};

TEST(Perturbation, ModifiedEntropyValues) {
  const auto p = Perturbation::kModifiedEntropy;
  EXPECT_EQ(f_value(p, 0.0), 0.0);
  EXPECT_NEAR(f_value(p, 1.0), 2.0 * std::log(2.0) - 1.0, 1e-15);
  EXPECT_NEAR(f_value(p, 1.0), 0.386294, 1e-6);
  EXPECT_EQ(f_prime(p, 0.0), 0.0);
  EXPECT_NEAR(f_prime(p, 1.0), 0.693147, 1e-6);
  EXPECT_EQ(f_second(p, 0.0), 1.0);
  EXPECT_EQ(f_second(p, 1.0), 0.5);
}

TEST(Perturbation, QuadraticValues) {
  const auto p = Perturbation::kQuadratic;
  EXPECT_EQ(f_value(p, 2.0), 4.0);
  EXPECT_EQ(f_prime(p, 3.0), 6.0);
  EXPECT_EQ(f_second(p, 0.0), 2.0);
}

TEST(Perturbation, ZeroAtOrigin) {
  for (auto p : kBoth) {
    EXPECT_EQ(f_value(p, 0.0), 0.0);
    EXPECT_EQ(f_prime(p, 0.0), 0.0);
  }
}

TEST(Perturbation, DerivativesMatchFiniteDifferences) {
  const double h = 1e-5;
  for (auto p : kBoth)
    for (double x = 0.01; x <= 10.0 + 1e-12; x += 0.01) {
      const double d1 = (f_value(p, x + h) - f_value(p, x - h)) / (2 * h);
      ASSERT_NEAR(d1, f_prime(p, x), 1e-6) << to_string(p) << " x=" << x;
      const double d2 = (f_prime(p, x + h) - f_prime(p, x - h)) / (2 * h);
      ASSERT_NEAR(d2, f_second(p, x), 1e-6) << to_string(p) << " x=" << x;
      ASSERT_GT(f_second(p, x), 0.0);
    }
}

TEST(Perturbation, RoundoffBelowZeroIsClamped) {
  EXPECT_EQ(f_prime(Perturbation::kModifiedEntropy, -5e-13), 0.0);
  EXPECT_EQ(f_value(Perturbation::kQuadratic, -5e-13), 0.0);
}

TEST(Perturbation, NegativeFlowThrows) {
  for (auto p : kBoth) {
    EXPECT_THROW(f_value(p, -0.1), ValidationError);
    EXPECT_THROW(f_prime(p, -1e-9), ValidationError);
    EXPECT_THROW(f_second(p, -2.0), ValidationError);
  }
}

TEST(Perturbation, NameRoundTrip) {
  for (auto p : kBoth) EXPECT_EQ(parse_perturbation(to_string(p)), p);
  EXPECT_THROW(parse_perturbation("entropy"), UsageError);
}

}  // namespace
}  // namespace purc
