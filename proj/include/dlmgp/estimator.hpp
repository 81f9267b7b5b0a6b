#pragma once

// Gradient estimators for per-point loss terms h(mu, v) of a Gaussian
// marginal q(f) = N(mu, v).
//
// Every estimator works in moment space and returns (dh/dmu, dh/dv); the
// chain rule through mu = a1'm + b1, v = a2'V a2 + b2 is shared. For the
// log-expectation term h = -log E_q[p(y|f)]:
//   exact       dh/dmu = -E[p']/E[p],  dh/dv = -E[p'']/(2 E[p])
//   bMC         same ratio with expectations replaced by sums over shared
//               draws f_l = mu + sqrt(v) eps_l
//   smooth-bMC  bMC with nu added to the denominator sum
//   uPS         minus the average score of N(mu, v) at draws from the tilted
//               density q(f) p(y|f) / E_q[p(y|f)]

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dlmgp/kernel.hpp"
#include "dlmgp/likelihood.hpp"
#include "dlmgp/random.hpp"
#include "dlmgp/sampler.hpp"

namespace dlmgp {

enum class EstimatorKind { kExact, kBmc, kSmoothBmc, kUps };

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_kind_from_string(const std::string& name);

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::kExact;
  int samples = 10;                 // L
  double smoothing = 0.0;           // nu, smooth-bMC only
  int max_width_multiplier = 10;    // n_max
  int vectorized_rounds = 2;
  int max_individual_attempts = 1000;
  std::uint64_t rng_seed = 0;
  int exact_quadrature_nodes = 64;  // non-analytic exact expectations

  void validate() const;
};

struct MomentGradient {
  double d_mu = 0.0;
  double d_var = 0.0;
  double d_lik_variance = 0.0;  // gradient w.r.t. the likelihood variance
};

// Gradient of a per-point loss with respect to (m, L_V).
struct PointGradient {
  VectorXd grad_m;
  MatrixXd grad_chol;  // lower triangular
  MomentGradient moments;
};

PointGradient to_parameter_gradient(const MarginalProjection& proj,
                                    const VariationalPosterior& q,
                                    const MomentGradient& moments);

// --- moment-space estimators of d/d(mu, v) of -log E_q[p(y|f)] ---

MomentGradient exact_log_expectation_gradient(const Likelihood& lik, double y,
                                              double mu, double v,
                                              int quadrature_nodes = 64);

MomentGradient bmc_log_expectation_gradient(const Likelihood& lik, double y,
                                            double mu, double v, int samples,
                                            double smoothing, Xoshiro256& rng,
                                            SamplerTelemetry* telemetry = nullptr);

// Score-function average at the given tilted draws.
MomentGradient ups_gradient_from_draws(const Likelihood& lik, double y,
                                       double mu, double v,
                                       std::span<const double> draws);

MomentGradient ups_log_expectation_gradient(const Likelihood& lik, double y,
                                            double mu, double v,
                                            const EstimatorConfig& cfg,
                                            Xoshiro256& rng,
                                            SamplerTelemetry* telemetry = nullptr);

// Reparameterized Monte Carlo gradient of E_q[-log p(y|f)] (the ELBO data
// term) from `samples` draws.
MomentGradient reparam_expected_loss_gradient(const Likelihood& lik, double y,
                                              double mu, double v, int samples,
                                              Xoshiro256& rng);

// --- parameter-space wrappers for a single observation ---

PointGradient reparam_gradient_exact(double y, const Likelihood& lik,
                                     const VariationalPosterior& q,
                                     const MarginalProjection& proj,
                                     int quadrature_nodes = 64);
PointGradient bmc_gradient(double y, const Likelihood& lik,
                           const VariationalPosterior& q,
                           const MarginalProjection& proj,
                           const EstimatorConfig& cfg, Xoshiro256& rng,
                           SamplerTelemetry* telemetry = nullptr);
PointGradient smooth_bmc_gradient(double y, const Likelihood& lik,
                                  const VariationalPosterior& q,
                                  const MarginalProjection& proj,
                                  const EstimatorConfig& cfg, Xoshiro256& rng,
                                  SamplerTelemetry* telemetry = nullptr);
PointGradient ups_gradient(double y, const Likelihood& lik,
                           const VariationalPosterior& q,
                           const MarginalProjection& proj,
                           const EstimatorConfig& cfg, Xoshiro256& rng,
                           SamplerTelemetry* telemetry = nullptr);

// Dispatch on cfg.kind for a batch of log-expectation terms. Point i uses the
// stream keyed by (cfg.rng_seed, epoch, stream_ids[i]), so results do not
// depend on batch composition or order. uPS uses the vectorized hybrid
// sampler, one draw slot at a time.
std::vector<MomentGradient> log_expectation_gradients(
    const Likelihood& lik, std::span<const double> y, std::span<const double> mu,
    std::span<const double> v, std::span<const std::uint64_t> stream_ids,
    const EstimatorConfig& cfg, std::uint64_t epoch,
    SamplerTelemetry* telemetry = nullptr);

// --- sample-size bound for bMC ---

struct LikelihoodMoments {
  double mean = 0.0;     // E[p]
  double mean_d1 = 0.0;  // E[p']
  double mean_d2 = 0.0;  // E[p'']
};

// max{ B^2/E[p]^2, (B'-b')^2/P^2, (B''-b'')^2/Q^2 } with P = |E[p']| (1 if
// zero) and Q = |E[p'']| (1 if zero).
double sample_size_constant(const DerivativeBounds& bounds,
                            const LikelihoodMoments& moments);

// Smallest integer L exceeding log(6 n / delta) / (2 gamma^2) * M.
std::int64_t required_sample_size(std::int64_t n_data, double delta,
                                  double gamma, const DerivativeBounds& bounds,
                                  const LikelihoodMoments& moments);

// E[p], E[p'], E[p''] under N(mu, v) by Gauss-Hermite.
LikelihoodMoments likelihood_moments(const Likelihood& lik, double y, double mu,
                                     double v, int quadrature_nodes = 64);

}  // namespace dlmgp
