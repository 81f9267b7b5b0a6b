#include "dlmgp/quadrature.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "dlmgp/errors.hpp"

namespace dlmgp {
namespace {

// Newton iteration on the orthonormal Hermite recurrence with the usual
// asymptotic starting guesses for the largest roots.
GaussHermiteRule compute_rule(int n) {
  GaussHermiteRule rule;
  rule.nodes.assign(static_cast<std::size_t>(n), 0.0);
  rule.weights.assign(static_cast<std::size_t>(n), 0.0);
  if (n == 1) {
    rule.weights[0] = std::sqrt(M_PI);
    return rule;
  }
  constexpr double kPiM4 = 0.7511255444649425;  // pi^{-1/4}
  const int half = (n + 1) / 2;
  std::vector<double> x(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> w(static_cast<std::size_t>(n) + 1, 0.0);
  double z = 0.0;
  for (int i = 1; i <= half; ++i) {
    if (i == 1) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 2) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 3) {
      z = 1.86 * z - 0.86 * x[1];
    } else if (i == 4) {
      z = 1.91 * z - 0.91 * x[2];
    } else {
      z = 2.0 * z - x[static_cast<std::size_t>(i - 2)];
    }
    double pp = 0.0;
    bool converged = false;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = kPiM4;
      double p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / j) * p2 -
             std::sqrt(static_cast<double>(j - 1) / j) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      throw NumericalError("Gauss-Hermite root iteration did not converge");
    }
    x[static_cast<std::size_t>(i)] = z;
    x[static_cast<std::size_t>(n + 1 - i)] = -z;
    w[static_cast<std::size_t>(i)] = 2.0 / (pp * pp);
    w[static_cast<std::size_t>(n + 1 - i)] = w[static_cast<std::size_t>(i)];
  }
  // x[1..n] is descending; store ascending.
  for (int i = 0; i < n; ++i) {
    rule.nodes[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(n - i)];
    rule.weights[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(n - i)];
  }
  return rule;
}

}  // namespace

const GaussHermiteRule& gauss_hermite(int n) {
  if (n < 1) throw InputError("Gauss-Hermite rule needs at least one node");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<GaussHermiteRule>(compute_rule(n));
  return *slot;
}

}  // namespace dlmgp
