#pragma once

// Rejection sampler for the tilted density q(f) p(y|f) / E_q[p(y|f)] with
// q = N(mean, variance). The proposal is N(mean, width * variance) with
// envelope constant K = max_f p(y|f); the width is the largest integer
// n <= n_max with max_{[a,b]} p(y|.) <= K / sqrt(n), where [a, b] = mean -+ r
// are the points at which the two normal densities cross.

#include <cstdint>
#include <span>
#include <vector>

#include "dlmgp/likelihood.hpp"
#include "dlmgp/random.hpp"

namespace dlmgp {

struct SamplerTelemetry {
  std::uint64_t accepted = 0;
  std::uint64_t rejected = 0;
  // chosen_widths[n] counts samplers built with width multiplier n.
  std::vector<std::uint64_t> chosen_widths;
  // rounds_used[k] for k < rounds counts points first accepted in vectorized
  // round k; the final slot counts points finished by individual sampling.
  std::vector<std::uint64_t> rounds_used;
  std::uint64_t sampling_failures = 0;
  std::uint64_t zero_likelihood_events = 0;
  // Smallest observed (1/L) sum_l p(y|f_l) in bMC estimates.
  double min_mean_likelihood = 0.0;
  bool has_min_mean_likelihood = false;

  void record_width(int width);
  void record_round(std::size_t slot, std::size_t slots);
  void record_mean_likelihood(double value);
  void merge(const SamplerTelemetry& other);
};

struct TiltedSampler {
  Likelihood lik;
  double y = 0.0;
  double mean = 0.0;
  double variance = 1.0;
  int width = 1;         // n
  double radius = 0.0;   // r
  double m1 = 0.0;       // max of p(y|.) on [mean - r, mean + r]
  double m2 = 1.0;       // 1/sqrt(n)
  double envelope = 1.0; // K = max_f p(y|f)

  double log_target(double f) const;    // log q(f) + log p(y|f)
  double log_proposal(double f) const;  // log h2(f)
  // Probability of accepting a proposal at f.
  double acceptance_probability(double f) const;
  // log of q(f) p(y|f) / (K h2(f)); <= 0 wherever the envelope holds.
  double log_acceptance(double f) const;
};

// Crossing radius of N(0, s^2) and N(0, n s^2): s * sqrt(log n / (1 - 1/n)),
// with the n -> 1 limit s.
double crossing_radius(double stddev, int width);

// max of p(y|f) over [lo, hi].
double max_likelihood_on_interval(const Likelihood& lik, double y, double lo,
                                  double hi);

TiltedSampler build_tilted_sampler(const Likelihood& lik, double y, double mean,
                                   double variance, int max_width = 10);

// One proposal/accept step. Returns true and sets `draw` on acceptance.
bool try_product_sample(const TiltedSampler& sampler, Xoshiro256& rng,
                        double& draw);

// Throws SamplingError after `max_attempts` rejections.
double product_sample(const TiltedSampler& sampler, Xoshiro256& rng,
                      int max_attempts, SamplerTelemetry* telemetry = nullptr);

struct VectorizedDraws {
  std::vector<double> draws;
  // Indices (into the batch) that needed individual sampling.
  std::vector<std::size_t> fallback;
};

// Hybrid sampler: `rounds` batched accept/reject passes over all pending
// points, keeping each point's first acceptance, then individual sampling for
// the rest. streams[i] is point i's generator; each point consumes its stream
// in the same order as product_sample would.
VectorizedDraws vectorized_product_sample(std::span<const TiltedSampler> batch,
                                          std::span<Xoshiro256> streams,
                                          int rounds, int max_attempts,
                                          SamplerTelemetry* telemetry = nullptr);

}  // namespace dlmgp
