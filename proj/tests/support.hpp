#pragma once

// Statistical helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace dlmgp::testing {

// sup_x |F_n(x) - F(x)| for a continuous reference CDF.
inline double ks_statistic(std::vector<double> draws,
                           const std::function<double(double)>& cdf) {
  std::sort(draws.begin(), draws.end());
  const double n = static_cast<double>(draws.size());
  double d = 0.0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const double f = cdf(draws[i]);
    d = std::max(d, std::max(f - i / n, (i + 1) / n - f));
  }
  return d;
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  return d;
}

// Asymptotic Kolmogorov survival function Q(lambda).
inline double kolmogorov_pvalue(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

inline double ks_two_sample_pvalue(const std::vector<double>& a,
                                   const std::vector<double>& b) {
  const double d = ks_two_sample(a, b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double en = std::sqrt(na * nb / (na + nb));
  return kolmogorov_pvalue((en + 0.12 + 0.11 / en) * d);
}

// CDF of an unnormalized log density tabulated on [lo, hi] with the
// trapezoid rule and linear interpolation between grid points.
class GridCdf {
 public:
  GridCdf(const std::function<double(double)>& log_density, double lo, double hi,
          std::size_t points)
      : lo_(lo), step_((hi - lo) / static_cast<double>(points - 1)), cdf_(points) {
    std::vector<double> logd(points);
    double top = -INFINITY;
    for (std::size_t k = 0; k < points; ++k) {
      logd[k] = log_density(lo + step_ * static_cast<double>(k));
      top = std::max(top, logd[k]);
    }
    double acc = 0.0;
    double prev = std::exp(logd[0] - top);
    cdf_[0] = 0.0;
    mean_acc_ = 0.0;
    for (std::size_t k = 1; k < points; ++k) {
      const double cur = std::exp(logd[k] - top);
      const double x0 = lo + step_ * static_cast<double>(k - 1);
      acc += 0.5 * step_ * (prev + cur);
      mean_acc_ += 0.5 * step_ * (prev * x0 + cur * (x0 + step_));
      cdf_[k] = acc;
      prev = cur;
    }
    for (double& c : cdf_) c /= acc;
    mean_acc_ /= acc;
  }

  double operator()(double x) const {
    if (x <= lo_) return 0.0;
    const double pos = (x - lo_) / step_;
    const auto k = static_cast<std::size_t>(pos);
    if (k + 1 >= cdf_.size()) return 1.0;
    const double t = pos - static_cast<double>(k);
    return (1.0 - t) * cdf_[k] + t * cdf_[k + 1];
  }

  double mean() const { return mean_acc_; }

 private:
  double lo_;
  double step_;
  std::vector<double> cdf_;
  double mean_acc_ = 0.0;
};

}  // namespace dlmgp::testing
