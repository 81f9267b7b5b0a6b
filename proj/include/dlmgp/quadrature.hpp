#pragma once

#include <cmath>
#include <vector>

namespace dlmgp {

// Gauss-Hermite rule for weight exp(-x^2). Nodes ascending.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Cached per node count (n >= 1). Thread-safe.
const GaussHermiteRule& gauss_hermite(int n);

// E_{N(f|mean, variance)}[g(f)] by an n-point rule.
template <typename F>
double gaussian_expectation(double mean, double variance, int n, F&& g) {
  const GaussHermiteRule& rule = gauss_hermite(n);
  constexpr double kInvSqrtPi = 0.56418958354775628695;
  const double scale = variance > 0.0 ? std::sqrt(2.0 * variance) : 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    acc += rule.weights[k] * g(mean + scale * rule.nodes[k]);
  }
  return acc * kInvSqrtPi;
}

}  // namespace dlmgp
