#include "dlmgp/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dlmgp/errors.hpp"
#include "dlmgp/quadrature.hpp"

namespace dlmgp {
namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kSqrtHalf = 0.70710678118654752440;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double sign_of_label(double y) { return y > 0.5 ? 1.0 : -1.0; }

inline double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double softplus(double f) {
  return f > 30.0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f));
}

inline double log_softplus(double f) {
  // For very negative f, softplus(f) = e^f (1 - e^f / 2 + ...).
  if (f < -30.0) return f - 0.5 * std::exp(f);
  return std::log(softplus(f));
}

double log_sum_exp(const std::vector<double>& values) {
  double top = kNegInf;
  for (double v : values) top = std::max(top, v);
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - top);
  return top + std::log(acc);
}

}  // namespace

std::string to_string(LikelihoodKind kind) {
  switch (kind) {
    case LikelihoodKind::kGaussian: return "gaussian";
    case LikelihoodKind::kProbit: return "probit";
    case LikelihoodKind::kLogistic: return "logistic";
    case LikelihoodKind::kPoissonExp: return "poisson-exp";
    case LikelihoodKind::kPoissonSoftplus: return "poisson-softplus";
    case LikelihoodKind::kStudentT: return "student-t";
  }
  return "unknown";
}

LikelihoodKind likelihood_kind_from_string(const std::string& name) {
  for (auto kind : {LikelihoodKind::kGaussian, LikelihoodKind::kProbit,
                    LikelihoodKind::kLogistic, LikelihoodKind::kPoissonExp,
                    LikelihoodKind::kPoissonSoftplus, LikelihoodKind::kStudentT}) {
    if (to_string(kind) == name) return kind;
  }
  throw InputError("unknown likelihood '" + name + "'");
}

double Likelihood::effective_variance() const {
  return std::max(variance, kLikelihoodVarianceFloor);
}

double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

double log_normal_cdf(double z) {
  if (z > 6.0) return std::log1p(-0.5 * std::erfc(z * kSqrtHalf));
  if (z > -30.0) return std::log(0.5 * std::erfc(-z * kSqrtHalf));
  // Asymptotic expansion of the lower tail.
  const double z2 = z * z;
  const double inv = 1.0 / z2;
  const double series =
      1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
  return -0.5 * z2 - kLogSqrt2Pi - std::log(-z) + std::log(series);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z * kSqrtHalf); }

double inverse_mills(double z) {
  return std::exp(-0.5 * z * z - kLogSqrt2Pi - log_normal_cdf(z));
}

void check_observation(const Likelihood& lik, double y) {
  if (!std::isfinite(y)) throw InputError("observation is not finite");
  switch (lik.kind) {
    case LikelihoodKind::kProbit:
    case LikelihoodKind::kLogistic:
      if (y != 0.0 && y != 1.0) {
        throw InputError("binary likelihood expects labels in {0, 1}");
      }
      break;
    case LikelihoodKind::kPoissonExp:
    case LikelihoodKind::kPoissonSoftplus:
      if (y < 0.0 || y != std::floor(y)) {
        throw InputError("Poisson likelihood expects non-negative integer counts");
      }
      break;
    case LikelihoodKind::kGaussian:
    case LikelihoodKind::kStudentT:
      break;
  }
}

LogPhi log_phi(const Likelihood& lik, double y, double f) {
  LogPhi out;
  switch (lik.kind) {
    case LikelihoodKind::kGaussian: {
      const double var = lik.effective_variance();
      const double sigma = std::sqrt(var);
      const double x = (y - f) / sigma;
      out.log_value = -kLogSqrt2Pi - std::log(sigma) - 0.5 * x * x;
      out.ratio1 = x / sigma;
      out.ratio2 = (x * x - 1.0) / var;
      break;
    }
    case LikelihoodKind::kProbit: {
      const double s = sign_of_label(y);
      const double z = s * f;
      const double mills = inverse_mills(z);
      out.log_value = log_normal_cdf(z);
      out.ratio1 = s * mills;
      out.ratio2 = -z * mills;
      break;
    }
    case LikelihoodKind::kLogistic: {
      const double s = sign_of_label(y);
      const double z = s * f;
      const double sig = sigmoid(z);
      const double one_minus = sigmoid(-z);
      out.log_value = log_sigmoid(z);
      out.ratio1 = s * one_minus;
      out.ratio2 = one_minus * (1.0 - 2.0 * sig);
      break;
    }
    case LikelihoodKind::kPoissonExp: {
      const double rate = std::exp(f);
      const double resid = y - rate;
      out.log_value = y * f - rate - std::lgamma(y + 1.0);
      out.ratio1 = resid;
      out.ratio2 = resid * resid - rate;
      break;
    }
    case LikelihoodKind::kPoissonSoftplus: {
      const double log_rate = log_softplus(f);
      const double rate = std::exp(log_rate);
      const double g1 = sigmoid(f);                 // g'
      const double g1_over_rate = std::exp(log_sigmoid(f) - log_rate);
      const double g2_over_rate = g1_over_rate * sigmoid(-f);  // g''/lambda
      const double g2 = g1 * sigmoid(-f);
      out.log_value = (y > 0.0 ? y * log_rate : 0.0) - rate - std::lgamma(y + 1.0);
      out.ratio1 = y * g1_over_rate - g1;
      out.ratio2 = y * g2_over_rate - g2 + y * (y - 1.0) * g1_over_rate * g1_over_rate -
                   2.0 * y * g1 * g1_over_rate + g1 * g1;
      break;
    }
    case LikelihoodKind::kStudentT: {
      const double nu = lik.dof;
      const double var = lik.effective_variance();
      const double sigma = std::sqrt(var);
      const double x = (y - f) / sigma;
      const double base = 1.0 + x * x / nu;
      const double log_c = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                           0.5 * std::log(M_PI * nu) - std::log(sigma);
      out.log_value = log_c - 0.5 * (nu + 1.0) * std::log1p(x * x / nu);
      out.ratio1 = (nu + 1.0) / nu * (x / sigma) / base;
      out.ratio2 = -(nu + 1.0) / nu * (1.0 - x * x * (nu + 2.0) / nu) /
                   (base * base) / var;
      break;
    }
  }
  return out;
}

PhiValues phi(const Likelihood& lik, double y, double f) {
  check_observation(lik, y);
  const LogPhi lp = log_phi(lik, y, f);
  PhiValues out;
  out.value = std::exp(lp.log_value);
  out.d1 = out.value * lp.ratio1;
  out.d2 = out.value * lp.ratio2;
  return out;
}

double dlog_phi_dvariance(const Likelihood& lik, double y, double f) {
  if (lik.kind != LikelihoodKind::kGaussian ||
      lik.variance < kLikelihoodVarianceFloor) {
    return 0.0;
  }
  const double var = lik.variance;
  const double r = y - f;
  return 0.5 * (r * r / (var * var) - 1.0 / var);
}

double DerivativeBounds::b_star() const {
  return std::max({upper, std::abs(upper_d1), std::abs(lower_d1),
                   std::abs(upper_d2), std::abs(lower_d2)});
}

DerivativeBounds derivative_bounds(const Likelihood& lik, double y) {
  DerivativeBounds b;
  switch (lik.kind) {
    case LikelihoodKind::kLogistic:
      b = {1.0, -0.25, 0.25, -0.25, 0.25};
      break;
    case LikelihoodKind::kGaussian: {
      const double var = lik.effective_variance();
      const double sigma = std::sqrt(var);
      const double c = kInvSqrt2Pi / sigma;
      const double d1 = c / (std::sqrt(M_E) * sigma);
      b = {c, -d1, d1, -c / var, 2.0 * c / (var * std::exp(1.5))};
      break;
    }
    case LikelihoodKind::kProbit: {
      const double d2 = 1.0 / std::sqrt(2.0 * M_PI * M_E);
      b = {1.0, -kInvSqrt2Pi, kInvSqrt2Pi, -d2, d2};
      break;
    }
    case LikelihoodKind::kPoissonSoftplus:
      b = {1.0, -1.0, 1.0, -2.25, 2.25};
      break;
    case LikelihoodKind::kPoissonExp:
      b = {1.0, -y - 1.0, y, -y - 0.25, 2.0 * y * y + 3.0 * y + 2.0};
      break;
    case LikelihoodKind::kStudentT: {
      const double nu = lik.dof;
      const double var = lik.effective_variance();
      const double sigma = std::sqrt(var);
      const double c = std::exp(std::lgamma(0.5 * (nu + 1.0)) -
                                std::lgamma(0.5 * nu)) /
                       (std::sqrt(M_PI * nu) * sigma);
      const double k = (nu + 1.0) / nu;
      const double d1 = c / sigma * k * std::sqrt(nu / (nu + 2.0)) /
                        std::pow((nu + 3.0) / (nu + 2.0), 0.5 * (nu + 3.0));
      b = {c, -d1, d1, -c / var * k,
           2.0 * c / var * k * std::pow((nu + 2.0) / (nu + 5.0), 0.5 * (nu + 5.0))};
      break;
    }
  }
  return b;
}

double ell_max(const Likelihood& lik, double y) {
  switch (lik.kind) {
    case LikelihoodKind::kLogistic:
    case LikelihoodKind::kProbit:
      return 1.0;
    case LikelihoodKind::kGaussian:
    case LikelihoodKind::kStudentT:
      return derivative_bounds(lik, y).upper;
    case LikelihoodKind::kPoissonExp:
    case LikelihoodKind::kPoissonSoftplus:
      // Maximized at rate = y; the supremum for y = 0 is 1 (rate -> 0).
      if (y <= 0.0) return 1.0;
      return std::exp(y * std::log(y) - y - std::lgamma(y + 1.0));
  }
  return 1.0;
}

std::optional<double> analytic_log_predictive(const Likelihood& lik, double mu,
                                              double v, double y) {
  v = std::max(v, 0.0);
  switch (lik.kind) {
    case LikelihoodKind::kGaussian: {
      const double total = v + lik.effective_variance();
      const double r = y - mu;
      return kLogSqrt2Pi + 0.5 * std::log(total) + 0.5 * r * r / total;
    }
    case LikelihoodKind::kProbit: {
      const double z = (2.0 * y - 1.0) * mu / std::sqrt(v + 1.0);
      return -log_normal_cdf(z);
    }
    default:
      return std::nullopt;
  }
}

AdaptiveRule adaptive_gauss_hermite(const Likelihood& lik, double y, double mu,
                                    double v, int nodes) {
  if (nodes < 2) throw InputError("quadrature needs at least 2 nodes");
  AdaptiveRule out;
  if (!(v > 0.0)) {
    out.nodes = {mu};
    out.log_weights = {0.0};
    return out;
  }
  const double prior_precision = 1.0 / v;
  const GaussHermiteRule& rule = gauss_hermite(nodes);
  const std::size_t count = rule.nodes.size();
  out.nodes.resize(count);
  out.log_weights.resize(count);
  if (lik.kind == LikelihoodKind::kStudentT) {
    // The product with a heavy-tailed likelihood can be bimodal, where a
    // single Laplace centre misses mass; use the rule of q itself.
    const double scale = std::sqrt(2.0 * v);
    for (std::size_t k = 0; k < count; ++k) {
      out.nodes[k] = mu + scale * rule.nodes[k];
      out.log_weights[k] = std::log(rule.weights[k]) - 0.5 * std::log(M_PI);
    }
    return out;
  }
  // Newton iterations for the mode of log N(f|mu, v) + log p(y|f), which is
  // concave for the remaining likelihoods.

  const double max_step = 5.0 * std::sqrt(v);
  double f = mu;
  double curvature = prior_precision;
  for (int it = 0; it < 100; ++it) {
    const LogPhi lp = log_phi(lik, y, f);
    const double slope = -(f - mu) * prior_precision + lp.ratio1;
    curvature = std::max(prior_precision - (lp.ratio2 - lp.ratio1 * lp.ratio1),
                         0.1 * prior_precision);
    const double step = std::clamp(slope / curvature, -max_step, max_step);
    if (!std::isfinite(step)) break;
    f += step;
    if (std::abs(step) <= 1e-12 * (1.0 + std::abs(f))) break;
  }
  const double s = 1.0 / std::sqrt(curvature);
  const double base = std::log(s) - 0.5 * std::log(v);
  for (std::size_t k = 0; k < count; ++k) {
    const double x = rule.nodes[k];
    const double fk = f + std::sqrt(2.0) * s * x;
    const double r = fk - mu;
    out.nodes[k] = fk;
    // w_k / sqrt(pi) * N(f_k|mu, v) / N(f_k|f, s^2)
    out.log_weights[k] = std::log(rule.weights[k]) - 0.5 * std::log(M_PI) + base +
                         x * x - 0.5 * r * r * prior_precision;
  }
  return out;
}

double quadrature_log_predictive(const Likelihood& lik, double mu, double v,
                                 double y, int nodes) {
  const AdaptiveRule rule = adaptive_gauss_hermite(lik, y, mu, v, nodes);
  std::vector<double> terms(rule.nodes.size());
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    terms[k] = rule.log_weights[k] + log_phi(lik, y, rule.nodes[k]).log_value;
  }
  return -log_sum_exp(terms);
}

double log_predictive(const Likelihood& lik, double mu, double v, double y,
                      int nodes) {
  if (auto exact = analytic_log_predictive(lik, mu, v, y)) return *exact;
  return quadrature_log_predictive(lik, mu, v, y, nodes);
}

std::optional<double> predictive_mean(const Likelihood& lik, double mu,
                                      double v) {
  v = std::max(v, 0.0);
  switch (lik.kind) {
    case LikelihoodKind::kGaussian:
      return mu;
    case LikelihoodKind::kProbit:
      return normal_cdf(mu / std::sqrt(1.0 + v));
    case LikelihoodKind::kPoissonExp:
      return std::exp(mu + 0.5 * v);
    default:
      return std::nullopt;
  }
}

double quadrature_predictive_mean(const Likelihood& lik, double mu, double v,
                                  int nodes) {
  return gaussian_expectation(mu, std::max(v, 0.0), nodes, [&](double f) {
    switch (lik.kind) {
      case LikelihoodKind::kGaussian:
      case LikelihoodKind::kStudentT:
        return f;
      case LikelihoodKind::kProbit:
        return normal_cdf(f);
      case LikelihoodKind::kLogistic:
        return sigmoid(f);
      case LikelihoodKind::kPoissonExp:
        return std::exp(f);
      case LikelihoodKind::kPoissonSoftplus:
        return softplus(f);
    }
    return f;
  });
}

ExpectedLoss expected_neg_log_lik(const Likelihood& lik, double mu, double v,
                                  double y, int nodes) {
  v = std::max(v, 0.0);
  ExpectedLoss out;
  if (lik.kind == LikelihoodKind::kGaussian) {
    const double var = lik.effective_variance();
    const double r = y - mu;
    out.value = kLogSqrt2Pi + 0.5 * std::log(var) + 0.5 * (r * r + v) / var;
    out.d_mu = -r / var;
    out.d_var = 0.5 / var;
    if (lik.variance >= kLikelihoodVarianceFloor) {
      out.d_lik_variance = 0.5 / var - 0.5 * (r * r + v) / (var * var);
    }
    return out;
  }
  const GaussHermiteRule& rule = gauss_hermite(nodes);
  constexpr double kInvSqrtPi = 0.56418958354775628695;
  const double scale = std::sqrt(2.0 * v);
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const double w = rule.weights[k] * kInvSqrtPi;
    const double f = mu + scale * rule.nodes[k];
    const LogPhi lp = log_phi(lik, y, f);
    out.value -= w * lp.log_value;
    out.d_mu -= w * lp.ratio1;
    out.d_var -= 0.5 * w * (lp.ratio2 - lp.ratio1 * lp.ratio1);
    out.d_lik_variance -= w * dlog_phi_dvariance(lik, y, f);
  }
  return out;
}

}  // namespace dlmgp
