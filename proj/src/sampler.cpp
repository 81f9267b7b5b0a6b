#include "dlmgp/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dlmgp/errors.hpp"

namespace dlmgp {
namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double log_normal_density(double f, double mean, double variance) {
  const double r = f - mean;
  return -kLogSqrt2Pi - 0.5 * std::log(variance) - 0.5 * r * r / variance;
}

// Location of max_f p(y|f) when it is attained at a finite f.
bool likelihood_mode(const Likelihood& lik, double y, double& mode) {
  switch (lik.kind) {
    case LikelihoodKind::kGaussian:
    case LikelihoodKind::kStudentT:
      mode = y;
      return true;
    case LikelihoodKind::kPoissonExp:
      if (y <= 0.0) return false;
      mode = std::log(y);
      return true;
    case LikelihoodKind::kPoissonSoftplus:
      if (y <= 0.0) return false;
      mode = y > 30.0 ? y : std::log(std::expm1(y));
      return true;
    case LikelihoodKind::kProbit:
    case LikelihoodKind::kLogistic:
      return false;
  }
  return false;
}

}  // namespace

void SamplerTelemetry::record_width(int width) {
  const auto slot = static_cast<std::size_t>(width);
  if (chosen_widths.size() <= slot) chosen_widths.resize(slot + 1, 0);
  ++chosen_widths[slot];
}

void SamplerTelemetry::record_round(std::size_t slot, std::size_t slots) {
  if (rounds_used.size() < slots) rounds_used.resize(slots, 0);
  ++rounds_used[slot];
}

void SamplerTelemetry::record_mean_likelihood(double value) {
  if (!has_min_mean_likelihood || value < min_mean_likelihood) {
    min_mean_likelihood = value;
    has_min_mean_likelihood = true;
  }
}

void SamplerTelemetry::merge(const SamplerTelemetry& other) {
  accepted += other.accepted;
  rejected += other.rejected;
  sampling_failures += other.sampling_failures;
  zero_likelihood_events += other.zero_likelihood_events;
  if (chosen_widths.size() < other.chosen_widths.size()) {
    chosen_widths.resize(other.chosen_widths.size(), 0);
  }
  for (std::size_t k = 0; k < other.chosen_widths.size(); ++k) {
    chosen_widths[k] += other.chosen_widths[k];
  }
  if (rounds_used.size() < other.rounds_used.size()) {
    rounds_used.resize(other.rounds_used.size(), 0);
  }
  for (std::size_t k = 0; k < other.rounds_used.size(); ++k) {
    rounds_used[k] += other.rounds_used[k];
  }
  if (other.has_min_mean_likelihood) {
    record_mean_likelihood(other.min_mean_likelihood);
  }
}

double TiltedSampler::log_target(double f) const {
  return log_normal_density(f, mean, variance) + log_phi(lik, y, f).log_value;
}

double TiltedSampler::log_proposal(double f) const {
  return log_normal_density(f, mean, width * variance);
}

double TiltedSampler::log_acceptance(double f) const {
  return log_target(f) - std::log(envelope) - log_proposal(f);
}

double TiltedSampler::acceptance_probability(double f) const {
  return std::min(1.0, std::exp(log_acceptance(f)));
}

double crossing_radius(double stddev, int width) {
  if (width <= 1) return stddev;
  const double n = static_cast<double>(width);
  return stddev * std::sqrt(std::log(n) / (1.0 - 1.0 / n));
}

double max_likelihood_on_interval(const Likelihood& lik, double y, double lo,
                                  double hi) {
  double best = std::max(std::exp(log_phi(lik, y, lo).log_value),
                         std::exp(log_phi(lik, y, hi).log_value));
  double mode = 0.0;
  if (likelihood_mode(lik, y, mode) && mode >= lo && mode <= hi) {
    best = std::max(best, std::exp(log_phi(lik, y, mode).log_value));
  }
  return best;
}

TiltedSampler build_tilted_sampler(const Likelihood& lik, double y, double mean,
                                   double variance, int max_width) {
  if (!(variance > 0.0) || !std::isfinite(mean)) {
    throw InputError("tilted sampler needs a finite mean and positive variance");
  }
  TiltedSampler sampler;
  sampler.lik = lik;
  sampler.y = y;
  sampler.mean = mean;
  sampler.variance = variance;
  sampler.envelope = ell_max(lik, y);
  const double stddev = std::sqrt(variance);
  for (int n = std::max(1, max_width); n >= 1; --n) {
    const double r = crossing_radius(stddev, n);
    const double m1 = max_likelihood_on_interval(lik, y, mean - r, mean + r);
    const double m2 = 1.0 / std::sqrt(static_cast<double>(n));
    if (n == 1 || m1 <= m2 * sampler.envelope) {
      sampler.width = n;
      sampler.radius = r;
      sampler.m1 = m1;
      sampler.m2 = m2;
      break;
    }
  }
  return sampler;
}

bool try_product_sample(const TiltedSampler& sampler, Xoshiro256& rng,
                        double& draw) {
  const double z = rng.normal();
  const double u = rng.uniform();
  const double f = sampler.mean + std::sqrt(sampler.width * sampler.variance) * z;
  if (std::log(u) < sampler.log_acceptance(f)) {
    draw = f;
    return true;
  }
  return false;
}

double product_sample(const TiltedSampler& sampler, Xoshiro256& rng,
                      int max_attempts, SamplerTelemetry* telemetry) {
  double draw = 0.0;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    if (try_product_sample(sampler, rng, draw)) {
      if (telemetry) ++telemetry->accepted;
      return draw;
    }
    if (telemetry) ++telemetry->rejected;
  }
  if (telemetry) ++telemetry->sampling_failures;
  throw SamplingError("product sampler exceeded " + std::to_string(max_attempts) +
                      " attempts (mean " + std::to_string(sampler.mean) +
                      ", variance " + std::to_string(sampler.variance) + ")");
}

VectorizedDraws vectorized_product_sample(std::span<const TiltedSampler> batch,
                                          std::span<Xoshiro256> streams,
                                          int rounds, int max_attempts,
                                          SamplerTelemetry* telemetry) {
  if (batch.empty()) throw InputError("vectorized sampling needs a nonempty batch");
  if (streams.size() != batch.size()) {
    throw InputError("one random stream per sampler is required");
  }
  const std::size_t count = batch.size();
  const std::size_t slots = static_cast<std::size_t>(std::max(rounds, 0)) + 1;
  VectorizedDraws out;
  out.draws.assign(count, 0.0);
  std::vector<std::size_t> pending(count);
  for (std::size_t i = 0; i < count; ++i) pending[i] = i;
  std::vector<int> attempts(count, 0);

  std::vector<double> proposal;
  std::vector<double> log_u;
  for (int round = 0; round < rounds && !pending.empty(); ++round) {
    proposal.resize(pending.size());
    log_u.resize(pending.size());
    for (std::size_t k = 0; k < pending.size(); ++k) {
      const std::size_t i = pending[k];
      const TiltedSampler& s = batch[i];
      const double z = streams[i].normal();
      log_u[k] = std::log(streams[i].uniform());
      proposal[k] = s.mean + std::sqrt(s.width * s.variance) * z;
    }
    std::vector<std::size_t> still_pending;
    still_pending.reserve(pending.size());
    for (std::size_t k = 0; k < pending.size(); ++k) {
      const std::size_t i = pending[k];
      ++attempts[i];
      if (log_u[k] < batch[i].log_acceptance(proposal[k])) {
        out.draws[i] = proposal[k];
        if (telemetry) {
          ++telemetry->accepted;
          telemetry->record_round(static_cast<std::size_t>(round), slots);
        }
      } else {
        if (telemetry) ++telemetry->rejected;
        still_pending.push_back(i);
      }
    }
    pending.swap(still_pending);
  }

  for (std::size_t i : pending) {
    out.fallback.push_back(i);
    const int remaining = max_attempts - attempts[i];
    if (remaining <= 0) {
      if (telemetry) ++telemetry->sampling_failures;
      throw SamplingError("product sampler exhausted its attempts");
    }
    out.draws[i] = product_sample(batch[i], streams[i], remaining, telemetry);
    if (telemetry) telemetry->record_round(slots - 1, slots);
  }
  return out;
}

}  // namespace dlmgp
