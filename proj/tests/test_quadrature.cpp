#include <gtest/gtest.h>

#include <cmath>

#include "dlmgp/quadrature.hpp"

using namespace dlmgp;

TEST(GaussHermite, WeightsSumToSqrtPi) {
  for (int n : {1, 2, 5, 20, 64, 100}) {
    const auto& rule = gauss_hermite(n);
    ASSERT_EQ(rule.nodes.size(), static_cast<std::size_t>(n));
    double total = 0.0;
    for (double w : rule.weights) total += w;
    EXPECT_NEAR(total, std::sqrt(M_PI), 1e-13) << n;
  }
}

TEST(GaussHermite, NodesAscendingAndSymmetric) {
  const auto& rule = gauss_hermite(20);
  for (std::size_t k = 1; k < rule.nodes.size(); ++k) {
    EXPECT_LT(rule.nodes[k - 1], rule.nodes[k]);
  }
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    EXPECT_NEAR(rule.nodes[k], -rule.nodes[rule.nodes.size() - 1 - k], 1e-13);
  }
}

TEST(GaussHermite, ExactForPolynomials) {
  // E[f^k] under N(mu, v) for k <= 2n-1.
  const double mu = 0.3, v = 1.7;
  EXPECT_NEAR(gaussian_expectation(mu, v, 3, [](double f) { return f; }), mu, 1e-14);
  EXPECT_NEAR(gaussian_expectation(mu, v, 3, [](double f) { return f * f; }),
              mu * mu + v, 1e-13);
  EXPECT_NEAR(gaussian_expectation(mu, v, 3, [](double f) { return f * f * f * f; }),
              mu * mu * mu * mu + 6 * mu * mu * v + 3 * v * v, 1e-12);
}

TEST(GaussHermite, MomentGeneratingFunction) {
  const double mu = -0.4, v = 0.8;
  EXPECT_NEAR(gaussian_expectation(mu, v, 30, [](double f) { return std::exp(f); }),
              std::exp(mu + 0.5 * v), 1e-13);
}

TEST(GaussHermite, ZeroVarianceIsPointEvaluation) {
  EXPECT_NEAR(gaussian_expectation(1.5, 0.0, 10, [](double f) { return f * f; }), 2.25,
              1e-13);
}
