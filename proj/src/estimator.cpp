#include "dlmgp/estimator.hpp"

#include <algorithm>
#include <cmath>

#include "dlmgp/errors.hpp"
#include "dlmgp/quadrature.hpp"
#include "dlmgp/simd.hpp"

namespace dlmgp {

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::kExact: return "exact";
    case EstimatorKind::kBmc: return "bmc";
    case EstimatorKind::kSmoothBmc: return "smooth-bmc";
    case EstimatorKind::kUps: return "ups";
  }
  return "unknown";
}

EstimatorKind estimator_kind_from_string(const std::string& name) {
  for (auto kind : {EstimatorKind::kExact, EstimatorKind::kBmc,
                    EstimatorKind::kSmoothBmc, EstimatorKind::kUps}) {
    if (to_string(kind) == name) return kind;
  }
  throw InputError("unknown estimator '" + name + "'");
}

void EstimatorConfig::validate() const {
  if (samples < 1) throw InputError("estimator needs at least one sample");
  if (!(smoothing >= 0.0)) throw InputError("smoothing must be non-negative");
  if (max_width_multiplier < 1) throw InputError("n_max must be at least 1");
  if (vectorized_rounds < 0) throw InputError("vectorized rounds must be >= 0");
  if (max_individual_attempts < 1) {
    throw InputError("max individual attempts must be at least 1");
  }
  if (exact_quadrature_nodes < 2) {
    throw InputError("exact quadrature needs at least 2 nodes");
  }
}

PointGradient to_parameter_gradient(const MarginalProjection& proj,
                                    const VariationalPosterior& q,
                                    const MomentGradient& moments) {
  PointGradient out;
  out.moments = moments;
  out.grad_m = moments.d_mu * proj.a1;
  const MatrixXd outer = proj.a2 * proj.a2.transpose();
  out.grad_chol =
      (2.0 * moments.d_var * outer * q.chol).triangularView<Eigen::Lower>();
  return out;
}

MomentGradient exact_log_expectation_gradient(const Likelihood& lik, double y,
                                              double mu, double v,
                                              int quadrature_nodes) {
  v = std::max(v, 0.0);
  MomentGradient g;
  switch (lik.kind) {
    case LikelihoodKind::kGaussian: {
      const double total = v + lik.effective_variance();
      const double r = y - mu;
      g.d_mu = -r / total;
      g.d_var = 0.5 / total - 0.5 * r * r / (total * total);
      if (lik.variance >= kLikelihoodVarianceFloor) g.d_lik_variance = g.d_var;
      return g;
    }
    case LikelihoodKind::kProbit: {
      const double s = y > 0.5 ? 1.0 : -1.0;
      const double scale = std::sqrt(1.0 + v);
      const double z = s * mu / scale;
      const double mills = inverse_mills(z);
      g.d_mu = -mills * s / scale;
      g.d_var = mills * z / (2.0 * (1.0 + v));
      return g;
    }
    default:
      break;
  }
  const AdaptiveRule rule = adaptive_gauss_hermite(lik, y, mu, v, quadrature_nodes);
  const std::size_t count = rule.nodes.size();
  std::vector<double> log_w(count), r1(count), r2(count);
  for (std::size_t k = 0; k < count; ++k) {
    const LogPhi lp = log_phi(lik, y, rule.nodes[k]);
    log_w[k] = rule.log_weights[k] + lp.log_value;
    r1[k] = lp.ratio1;
    r2[k] = lp.ratio2;
  }
  const simd::RatioSums sums = simd::weighted_ratio_sums(log_w, r1, r2);
  if (!(sums.sum_w > 0.0)) {
    throw NumericalError("expected likelihood underflowed in exact gradient");
  }
  g.d_mu = -sums.sum_w_r1 / sums.sum_w;
  g.d_var = -0.5 * sums.sum_w_r2 / sums.sum_w;
  return g;
}

MomentGradient bmc_log_expectation_gradient(const Likelihood& lik, double y,
                                            double mu, double v, int samples,
                                            double smoothing, Xoshiro256& rng,
                                            SamplerTelemetry* telemetry) {
  const auto count = static_cast<std::size_t>(samples);
  const double stddev = std::sqrt(std::max(v, 0.0));
  std::vector<double> draws(count), log_p(count), r1(count), r2(count);
  for (std::size_t l = 0; l < count; ++l) {
    draws[l] = mu + stddev * rng.normal();
    const LogPhi lp = log_phi(lik, y, draws[l]);
    log_p[l] = lp.log_value;
    r1[l] = lp.ratio1;
    r2[l] = lp.ratio2;
  }
  const simd::RatioSums sums = simd::weighted_ratio_sums(log_p, r1, r2);
  MomentGradient g;
  if (!(sums.sum_w > 0.0)) {
    if (telemetry) ++telemetry->zero_likelihood_events;
    return g;
  }
  if (telemetry) {
    telemetry->record_mean_likelihood(std::exp(sums.max_log) * sums.sum_w /
                                      static_cast<double>(count));
  }
  double denom = sums.sum_w;
  if (smoothing > 0.0) denom += smoothing * std::exp(-sums.max_log);
  g.d_mu = -sums.sum_w_r1 / denom;
  g.d_var = -0.5 * sums.sum_w_r2 / denom;
  if (lik.has_variance_parameter()) {
    double acc = 0.0;
    for (std::size_t l = 0; l < count; ++l) {
      acc += std::exp(log_p[l] - sums.max_log) *
             dlog_phi_dvariance(lik, y, draws[l]);
    }
    g.d_lik_variance = -acc / denom;
  }
  return g;
}

MomentGradient ups_gradient_from_draws(const Likelihood& lik, double y,
                                       double mu, double v,
                                       std::span<const double> draws) {
  MomentGradient g;
  if (draws.empty()) return g;
  double score_mu = 0.0;
  double score_var = 0.0;
  double score_lik = 0.0;
  for (double f : draws) {
    const double r = f - mu;
    score_mu += r / v;
    score_var += -0.5 / v + 0.5 * r * r / (v * v);
    if (lik.has_variance_parameter()) score_lik += dlog_phi_dvariance(lik, y, f);
  }
  const double inv = 1.0 / static_cast<double>(draws.size());
  g.d_mu = -score_mu * inv;
  g.d_var = -score_var * inv;
  g.d_lik_variance = -score_lik * inv;
  return g;
}

MomentGradient ups_log_expectation_gradient(const Likelihood& lik, double y,
                                            double mu, double v,
                                            const EstimatorConfig& cfg,
                                            Xoshiro256& rng,
                                            SamplerTelemetry* telemetry) {
  const TiltedSampler sampler =
      build_tilted_sampler(lik, y, mu, v, cfg.max_width_multiplier);
  if (telemetry) telemetry->record_width(sampler.width);
  std::vector<double> draws(static_cast<std::size_t>(cfg.samples));
  for (double& f : draws) {
    f = product_sample(sampler, rng, cfg.max_individual_attempts, telemetry);
  }
  return ups_gradient_from_draws(lik, y, mu, v, draws);
}

MomentGradient reparam_expected_loss_gradient(const Likelihood& lik, double y,
                                              double mu, double v, int samples,
                                              Xoshiro256& rng) {
  MomentGradient g;
  const double stddev = std::sqrt(std::max(v, 0.0));
  for (int l = 0; l < samples; ++l) {
    const double eps = rng.normal();
    const double f = mu + stddev * eps;
    const LogPhi lp = log_phi(lik, y, f);
    g.d_mu -= lp.ratio1;
    if (stddev > 0.0) {
      g.d_var -= lp.ratio1 * eps / (2.0 * stddev);
    } else {
      g.d_var -= 0.5 * (lp.ratio2 - lp.ratio1 * lp.ratio1);
    }
    g.d_lik_variance -= dlog_phi_dvariance(lik, y, f);
  }
  const double inv = 1.0 / samples;
  g.d_mu *= inv;
  g.d_var *= inv;
  g.d_lik_variance *= inv;
  return g;
}

PointGradient reparam_gradient_exact(double y, const Likelihood& lik,
                                     const VariationalPosterior& q,
                                     const MarginalProjection& proj,
                                     int quadrature_nodes) {
  const double v = proj.variance(q);
  if (!(v > 0.0)) throw NumericalError("marginal variance must be positive");
  return to_parameter_gradient(
      proj, q,
      exact_log_expectation_gradient(lik, y, proj.mean(q), v, quadrature_nodes));
}

PointGradient bmc_gradient(double y, const Likelihood& lik,
                           const VariationalPosterior& q,
                           const MarginalProjection& proj,
                           const EstimatorConfig& cfg, Xoshiro256& rng,
                           SamplerTelemetry* telemetry) {
  return to_parameter_gradient(
      proj, q,
      bmc_log_expectation_gradient(lik, y, proj.mean(q), proj.variance(q),
                                   cfg.samples, 0.0, rng, telemetry));
}

PointGradient smooth_bmc_gradient(double y, const Likelihood& lik,
                                  const VariationalPosterior& q,
                                  const MarginalProjection& proj,
                                  const EstimatorConfig& cfg, Xoshiro256& rng,
                                  SamplerTelemetry* telemetry) {
  return to_parameter_gradient(
      proj, q,
      bmc_log_expectation_gradient(lik, y, proj.mean(q), proj.variance(q),
                                   cfg.samples, cfg.smoothing, rng, telemetry));
}

PointGradient ups_gradient(double y, const Likelihood& lik,
                           const VariationalPosterior& q,
                           const MarginalProjection& proj,
                           const EstimatorConfig& cfg, Xoshiro256& rng,
                           SamplerTelemetry* telemetry) {
  return to_parameter_gradient(
      proj, q,
      ups_log_expectation_gradient(lik, y, proj.mean(q), proj.variance(q), cfg,
                                   rng, telemetry));
}

std::vector<MomentGradient> log_expectation_gradients(
    const Likelihood& lik, std::span<const double> y, std::span<const double> mu,
    std::span<const double> v, std::span<const std::uint64_t> stream_ids,
    const EstimatorConfig& cfg, std::uint64_t epoch,
    SamplerTelemetry* telemetry) {
  const std::size_t count = y.size();
  std::vector<MomentGradient> out(count);
  switch (cfg.kind) {
    case EstimatorKind::kExact:
      for (std::size_t i = 0; i < count; ++i) {
        out[i] = exact_log_expectation_gradient(lik, y[i], mu[i], v[i],
                                                cfg.exact_quadrature_nodes);
      }
      return out;
    case EstimatorKind::kBmc:
    case EstimatorKind::kSmoothBmc: {
      const double nu = cfg.kind == EstimatorKind::kSmoothBmc ? cfg.smoothing : 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        Xoshiro256 rng = make_stream(cfg.rng_seed, epoch, stream_ids[i]);
        out[i] = bmc_log_expectation_gradient(lik, y[i], mu[i], v[i],
                                              cfg.samples, nu, rng, telemetry);
      }
      return out;
    }
    case EstimatorKind::kUps: {
      if (count == 0) return out;
      std::vector<TiltedSampler> samplers;
      std::vector<Xoshiro256> streams;
      samplers.reserve(count);
      streams.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        samplers.push_back(build_tilted_sampler(lik, y[i], mu[i], v[i],
                                                cfg.max_width_multiplier));
        if (telemetry) telemetry->record_width(samplers.back().width);
        streams.push_back(make_stream(cfg.rng_seed, epoch, stream_ids[i]));
      }
      std::vector<std::vector<double>> draws(
          count, std::vector<double>(static_cast<std::size_t>(cfg.samples)));
      for (int l = 0; l < cfg.samples; ++l) {
        const VectorizedDraws slot = vectorized_product_sample(
            samplers, streams, cfg.vectorized_rounds,
            cfg.max_individual_attempts, telemetry);
        for (std::size_t i = 0; i < count; ++i) {
          draws[i][static_cast<std::size_t>(l)] = slot.draws[i];
        }
      }
      for (std::size_t i = 0; i < count; ++i) {
        out[i] = ups_gradient_from_draws(lik, y[i], mu[i], v[i], draws[i]);
      }
      return out;
    }
  }
  return out;
}

double sample_size_constant(const DerivativeBounds& bounds,
                            const LikelihoodMoments& moments) {
  const double p = moments.mean_d1 != 0.0 ? std::abs(moments.mean_d1) : 1.0;
  const double q = moments.mean_d2 != 0.0 ? std::abs(moments.mean_d2) : 1.0;
  const double spread1 = bounds.upper_d1 - bounds.lower_d1;
  const double spread2 = bounds.upper_d2 - bounds.lower_d2;
  const double first = bounds.upper * bounds.upper / (moments.mean * moments.mean);
  return std::max({first, spread1 * spread1 / (p * p), spread2 * spread2 / (q * q)});
}

std::int64_t required_sample_size(std::int64_t n_data, double delta,
                                  double gamma, const DerivativeBounds& bounds,
                                  const LikelihoodMoments& moments) {
  if (!(delta > 0.0 && delta < 1.0) || !(gamma > 0.0 && gamma < 1.0)) {
    throw InputError("delta and gamma must lie in (0, 1)");
  }
  if (n_data < 1) throw InputError("n_data must be positive");
  if (!(moments.mean > 0.0)) {
    throw InputError("expected likelihood must be positive");
  }
  const double bound = std::log(6.0 * static_cast<double>(n_data) / delta) /
                       (2.0 * gamma * gamma) *
                       sample_size_constant(bounds, moments);
  return static_cast<std::int64_t>(std::floor(bound)) + 1;
}

LikelihoodMoments likelihood_moments(const Likelihood& lik, double y, double mu,
                                     double v, int quadrature_nodes) {
  const AdaptiveRule rule = adaptive_gauss_hermite(lik, y, mu, v, quadrature_nodes);
  LikelihoodMoments out;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const LogPhi lp = log_phi(lik, y, rule.nodes[k]);
    const double w = std::exp(rule.log_weights[k] + lp.log_value);
    out.mean += w;
    out.mean_d1 += w * lp.ratio1;
    out.mean_d2 += w * lp.ratio2;
  }
  return out;
}

}  // namespace dlmgp
