#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "purc/error.hpp"

namespace purc {

/// Convex link perturbation F with F(0) = F'(0) = 0 and F'' > 0.
enum class Perturbation {
  kModifiedEntropy,  // (1+x)ln(1+x) - x
  kQuadratic,        // x^2
};

inline Perturbation parse_perturbation(std::string_view name) {
  if (name == "modified_entropy") return Perturbation::kModifiedEntropy;
  if (name == "quadratic") return Perturbation::kQuadratic;
  throw UsageError("unknown perturbation '" + std::string(name) + "'");
}

inline std::string to_string(Perturbation p) {
  switch (p) {
    case Perturbation::kModifiedEntropy: return "modified_entropy";
    case Perturbation::kQuadratic: return "quadratic";
  }
  return "?";
}

namespace detail {

// Round-off from the solver may leave flows a hair below zero.
constexpr double kNegativeFlowSlack = 1e-12;

inline double clamp_flow(double x) {
  if (x >= 0.0) return x;
  if (x > -kNegativeFlowSlack) return 0.0;
  throw ValidationError("perturbation evaluated at negative flow " + std::to_string(x));
}

}  // namespace detail

inline double f_value(Perturbation p, double x) {
  x = detail::clamp_flow(x);
  switch (p) {
    case Perturbation::kModifiedEntropy: return (1.0 + x) * std::log1p(x) - x;
    case Perturbation::kQuadratic: return x * x;
  }
  return 0.0;
}

inline double f_prime(Perturbation p, double x) {
  x = detail::clamp_flow(x);
  switch (p) {
    case Perturbation::kModifiedEntropy: return std::log1p(x);
    case Perturbation::kQuadratic: return 2.0 * x;
  }
  return 0.0;
}

inline double f_second(Perturbation p, double x) {
  x = detail::clamp_flow(x);
  switch (p) {
    case Perturbation::kModifiedEntropy: return 1.0 / (1.0 + x);
    case Perturbation::kQuadratic: return 2.0;
  }
  return 0.0;
}

}  // namespace purc
