#pragma once

// Per-observation likelihoods p(y|f) with first and second f-derivatives,
// derivative bound constants, and predictive quantities under a Gaussian
// marginal q(f) = N(mu, v).
//
// Binary labels are {0, 1} at the data layer and mapped to s = 2y - 1 inside
// the probit and logistic formulas. Counts are non-negative integers.

#include <optional>
#include <string>
#include <vector>

namespace dlmgp {

enum class LikelihoodKind {
  kGaussian,
  kProbit,
  kLogistic,
  kPoissonExp,
  kPoissonSoftplus,
  kStudentT,
};

std::string to_string(LikelihoodKind kind);
LikelihoodKind likelihood_kind_from_string(const std::string& name);

// Variances of Gaussian and Student-t likelihoods are floored here so that
// max_f p(y|f) stays finite.
inline constexpr double kLikelihoodVarianceFloor = 1e-4;

struct Likelihood {
  LikelihoodKind kind = LikelihoodKind::kGaussian;
  double variance = 1.0;  // sigma^2 (gaussian, student-t)
  double dof = 3.0;       // nu (student-t)

  static Likelihood gaussian(double variance) {
    return {LikelihoodKind::kGaussian, variance, 0.0};
  }
  static Likelihood probit() { return {LikelihoodKind::kProbit, 1.0, 0.0}; }
  static Likelihood logistic() { return {LikelihoodKind::kLogistic, 1.0, 0.0}; }
  static Likelihood poisson_exp() {
    return {LikelihoodKind::kPoissonExp, 1.0, 0.0};
  }
  static Likelihood poisson_softplus() {
    return {LikelihoodKind::kPoissonSoftplus, 1.0, 0.0};
  }
  static Likelihood student_t(double dof, double variance) {
    return {LikelihoodKind::kStudentT, variance, dof};
  }

  double effective_variance() const;
  bool has_variance_parameter() const {
    return kind == LikelihoodKind::kGaussian;
  }
};

// Throws InputError if y is outside the likelihood's support.
void check_observation(const Likelihood& lik, double y);

struct PhiValues {
  double value = 0.0;  // p(y|f)
  double d1 = 0.0;     // dp/df
  double d2 = 0.0;     // d^2p/df^2
};

// Log-domain form: log p(y|f) and the ratios p'/p, p''/p, which stay finite
// where p underflows.
struct LogPhi {
  double log_value = 0.0;
  double ratio1 = 0.0;
  double ratio2 = 0.0;
};

LogPhi log_phi(const Likelihood& lik, double y, double f);
PhiValues phi(const Likelihood& lik, double y, double f);

// d log p(y|f) / d sigma^2 for likelihoods with a trainable variance; zero
// otherwise.
double dlog_phi_dvariance(const Likelihood& lik, double y, double f);

struct DerivativeBounds {
  double upper = 0.0;     // B
  double lower_d1 = 0.0;  // b'
  double upper_d1 = 0.0;  // B'
  double lower_d2 = 0.0;  // b''
  double upper_d2 = 0.0;  // B''

  double b_star() const;
};

DerivativeBounds derivative_bounds(const Likelihood& lik, double y);

// max_f p(y|f).
double ell_max(const Likelihood& lik, double y);

// -log E_q[p(y|f)] in closed form (gaussian, probit); nullopt otherwise.
std::optional<double> analytic_log_predictive(const Likelihood& lik, double mu,
                                              double v, double y);

// Adaptive Gauss-Hermite rule for integrals against N(f|mu, v) p(y|f). The
// rule is centred at the mode of the integrand with the Laplace scale, so
//   log E_q[p(y|f)] ~= logsumexp_k(log_weights[k] + log p(y|f_k)),
// which is exact for Gaussian likelihoods. Student-t products may be bimodal
// and use the plain rule for q instead. v = 0 gives the single node mu.
struct AdaptiveRule {
  std::vector<double> nodes;
  std::vector<double> log_weights;
};

AdaptiveRule adaptive_gauss_hermite(const Likelihood& lik, double y, double mu,
                                    double v, int nodes);

// -log E_q[p(y|f)] by adaptive Gauss-Hermite with `nodes` points (>= 2).
double quadrature_log_predictive(const Likelihood& lik, double mu, double v,
                                 double y, int nodes = 20);

// Analytic when available, otherwise quadrature.
double log_predictive(const Likelihood& lik, double mu, double v, double y,
                      int nodes = 20);

// E_q[E[y|f]]: mu (gaussian), P(y=1) (probit), exp(mu + v/2) (poisson-exp).
std::optional<double> predictive_mean(const Likelihood& lik, double mu,
                                      double v);
double quadrature_predictive_mean(const Likelihood& lik, double mu, double v,
                                  int nodes = 20);

// E_q[-log p(y|f)], the ELBO data term, with its derivatives in mu, v and
// the likelihood variance.
struct ExpectedLoss {
  double value = 0.0;
  double d_mu = 0.0;
  double d_var = 0.0;
  double d_lik_variance = 0.0;
};

ExpectedLoss expected_neg_log_lik(const Likelihood& lik, double mu, double v,
                                  double y, int nodes = 20);

// Standard normal helpers.
double normal_pdf(double z);
double log_normal_cdf(double z);
double normal_cdf(double z);
// pdf(z) / cdf(z), stable for very negative z.
double inverse_mills(double z);

}  // namespace dlmgp
