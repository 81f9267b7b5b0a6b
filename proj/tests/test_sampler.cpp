#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dlmgp/errors.hpp"
#include "dlmgp/likelihood.hpp"
#include "dlmgp/sampler.hpp"
#include "support.hpp"

using namespace dlmgp;
using dlmgp::testing::GridCdf;
using dlmgp::testing::ks_statistic;
using dlmgp::testing::ks_two_sample_pvalue;

namespace {

std::vector<double> draw_many(const TiltedSampler& s, int count, std::uint64_t seed,
                              SamplerTelemetry* telemetry = nullptr) {
  Xoshiro256 rng(seed);
  std::vector<double> out(static_cast<std::size_t>(count));
  for (auto& d : out) d = product_sample(s, rng, 100000, telemetry);
  return out;
}

GridCdf tilted_cdf(const TiltedSampler& s) {
  const double sd = std::sqrt(s.variance);
  return GridCdf([&](double f) { return s.log_target(f); }, s.mean - 12 * sd,
                 s.mean + 12 * sd, 200001);
}

struct Config {
  Likelihood lik;
  double y, mean, variance;
};

std::vector<Config> configurations() {
  return {
      {Likelihood::gaussian(1.0), 0.0, 0.0, 1.0},
      {Likelihood::gaussian(0.2), 2.0, -1.0, 3.0},
      {Likelihood::probit(), 1.0, 0.0, 1.0},
      {Likelihood::probit(), 1.0, -3.0, 1.0},
      {Likelihood::probit(), 0.0, 2.0, 4.0},
      {Likelihood::logistic(), 1.0, 0.5, 2.0},
      {Likelihood::poisson_exp(), 3.0, 1.0, 0.5},
      {Likelihood::poisson_exp(), 0.0, 0.0, 2.0},
      {Likelihood::poisson_exp(), 10.0, 0.0, 1.0},
      {Likelihood::student_t(3.0, 0.5), 1.0, -1.0, 2.0},
  };
}

}  // namespace

TEST(TiltedSampler, CrossingRadiusAndHeight) {
  EXPECT_NEAR(crossing_radius(1.0, 4), 1.3596, 1e-4);
  EXPECT_NEAR(crossing_radius(2.5, 4), 2.5 * std::sqrt(std::log(4.0) / 0.75), 1e-14);
  EXPECT_DOUBLE_EQ(crossing_radius(0.7, 1), 0.7);
  const TiltedSampler s =
      build_tilted_sampler(Likelihood::probit(), 1.0, -30.0, 1.0, 9);
  EXPECT_EQ(s.width, 9);
  EXPECT_DOUBLE_EQ(s.m2, 1.0 / 3.0);
}

TEST(TiltedSampler, NormalDensitiesCrossAtRadius) {
  for (int n : {2, 4, 9}) {
    const double sd = 1.3;
    const double r = crossing_radius(sd, n);
    auto logn = [](double x, double var) {
      return -0.5 * std::log(2 * M_PI * var) - 0.5 * x * x / var;
    };
    EXPECT_NEAR(logn(r, sd * sd), logn(r, n * sd * sd), 1e-12);
  }
}

TEST(TiltedSampler, WidthRuleIsLargestSatisfyingWidth) {
  for (const Config& c : configurations()) {
    const TiltedSampler s = build_tilted_sampler(c.lik, c.y, c.mean, c.variance, 10);
    ASSERT_GE(s.width, 1);
    ASSERT_LE(s.width, 10);
    if (s.width > 1) EXPECT_LE(s.m1, s.m2 * s.envelope);
    for (int n = s.width + 1; n <= 10; ++n) {
      const double r = crossing_radius(std::sqrt(c.variance), n);
      const double m1 = max_likelihood_on_interval(c.lik, c.y, c.mean - r, c.mean + r);
      EXPECT_GT(m1, s.envelope / std::sqrt(static_cast<double>(n)));
    }
  }
}

TEST(TiltedSampler, EnvelopeHoldsOnGrid) {
  for (const Config& c : configurations()) {
    const TiltedSampler s = build_tilted_sampler(c.lik, c.y, c.mean, c.variance, 10);
    const double sd = std::sqrt(c.variance);
    for (int k = 0; k < 10000; ++k) {
      const double f = c.mean - 15 * sd + 30 * sd * k / 9999.0;
      const double ratio = std::exp(s.log_acceptance(f));
      ASSERT_LE(ratio, 1.0 + 1e-9) << to_string(c.lik.kind) << " f=" << f;
      const double p = s.acceptance_probability(f);
      ASSERT_GE(p, 0.0);
      ASSERT_LE(p, 1.0);
    }
  }
}

TEST(ProductSample, GaussianMatchesConjugateProduct) {
  const double mu = 0.4, v = 1.5, y = -0.8, s2 = 0.6;
  const TiltedSampler s = build_tilted_sampler(Likelihood::gaussian(s2), y, mu, v);
  const double prec = 1.0 / v + 1.0 / s2;
  const double post_var = 1.0 / prec;
  const double post_mean = post_var * (mu / v + y / s2);
  const auto draws = draw_many(s, 100000, 1);
  const double d = ks_statistic(draws, [&](double f) {
    return 0.5 * std::erfc(-(f - post_mean) / std::sqrt(2 * post_var));
  });
  EXPECT_LT(d, 0.01);
}

TEST(ProductSample, FlatLikelihoodReturnsPrior) {
  // A very wide Gaussian likelihood is flat to within 1e-10 over the prior.
  const double mu = 1.2, v = 0.5;
  const TiltedSampler s = build_tilted_sampler(Likelihood::gaussian(1e12), 0.0, mu, v);
  EXPECT_EQ(s.width, 1);
  const int n = 100000;
  const auto draws = draw_many(s, n, 2);
  double mean = 0.0;
  for (double d : draws) mean += d;
  mean /= n;
  EXPECT_NEAR(mean, mu, 3.0 * std::sqrt(v / n));
}

TEST(ProductSample, ProbitTiltsTowardPositive) {
  const TiltedSampler s = build_tilted_sampler(Likelihood::probit(), 1.0, -3.0, 1.0);
  const GridCdf cdf = tilted_cdf(s);
  const int n = 100000;
  const auto draws = draw_many(s, n, 3);
  double mean = 0.0;
  for (double d : draws) mean += d;
  mean /= n;
  EXPECT_GT(mean, -3.0);
  EXPECT_NEAR(mean, cdf.mean(), 0.01);
}

TEST(ProductSample, MatchesGridDensityAcrossConfigurations) {
  std::uint64_t seed = 10;
  for (const Config& c : configurations()) {
    const TiltedSampler s = build_tilted_sampler(c.lik, c.y, c.mean, c.variance);
    const GridCdf cdf = tilted_cdf(s);
    const auto draws = draw_many(s, 100000, seed++);
    EXPECT_LT(ks_statistic(draws, cdf), 0.01) << to_string(c.lik.kind) << " y=" << c.y
                                              << " mu=" << c.mean;
  }
}

TEST(ProductSample, AlignedCaseAcceptsOften) {
  // Likelihood peak within one standard deviation and l(mu) >= l_max / 2.
  const TiltedSampler s = build_tilted_sampler(Likelihood::gaussian(1.0), 0.5, 0.0, 1.0);
  ASSERT_GE(std::exp(log_phi(s.lik, 0.5, 0.0).log_value), 0.5 * s.envelope);
  SamplerTelemetry t;
  draw_many(s, 20000, 4, &t);
  const double rate = static_cast<double>(t.accepted) /
                      static_cast<double>(t.accepted + t.rejected);
  EXPECT_GE(rate, 0.25);
  EXPECT_LE(s.width, 3);
}

TEST(ProductSample, ExhaustionIsSamplingError) {
  const TiltedSampler s = build_tilted_sampler(Likelihood::probit(), 1.0, -30.0, 1.0);
  Xoshiro256 rng(5);
  SamplerTelemetry t;
  EXPECT_THROW(product_sample(s, rng, 3, &t), SamplingError);
  EXPECT_EQ(t.sampling_failures, 1u);
  EXPECT_EQ(t.rejected, 3u);
}

TEST(ProductSample, InvalidMomentsRejected) {
  EXPECT_THROW(build_tilted_sampler(Likelihood::probit(), 1.0, 0.0, 0.0), InputError);
  EXPECT_THROW(build_tilted_sampler(Likelihood::probit(), 1.0, NAN, 1.0), InputError);
}

TEST(VectorizedSampler, FlatLikelihoodAcceptsInFirstRound) {
  std::vector<TiltedSampler> batch(
      64, build_tilted_sampler(Likelihood::gaussian(1e14), 0.0, 0.0, 1.0));
  std::vector<Xoshiro256> streams;
  for (int i = 0; i < 64; ++i) streams.push_back(make_stream(1, 0, i));
  SamplerTelemetry t;
  const VectorizedDraws out = vectorized_product_sample(batch, streams, 2, 100, &t);
  EXPECT_TRUE(out.fallback.empty());
  ASSERT_GE(t.rounds_used.size(), 1u);
  EXPECT_EQ(t.rounds_used[0], 64u);
  EXPECT_EQ(t.rejected, 0u);
}

TEST(VectorizedSampler, RoundHistogramSumsToBatch) {
  std::vector<TiltedSampler> batch;
  std::vector<Xoshiro256> streams;
  const auto configs = configurations();
  for (int i = 0; i < 200; ++i) {
    const Config& c = configs[i % configs.size()];
    batch.push_back(build_tilted_sampler(c.lik, c.y, c.mean, c.variance));
    streams.push_back(make_stream(9, 0, i));
  }
  SamplerTelemetry t;
  const VectorizedDraws out = vectorized_product_sample(batch, streams, 2, 100000, &t);
  std::uint64_t total = 0;
  for (auto c : t.rounds_used) total += c;
  EXPECT_EQ(total, batch.size());
  EXPECT_EQ(t.accepted, batch.size());
  EXPECT_EQ(t.rounds_used.back(), out.fallback.size());
}

TEST(VectorizedSampler, SameStreamsGiveSameDrawsAsPerPoint) {
  const auto configs = configurations();
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const Config& c = configs[i];
    const TiltedSampler s = build_tilted_sampler(c.lik, c.y, c.mean, c.variance);
    std::vector<TiltedSampler> batch(1, s);
    std::vector<Xoshiro256> streams(1, make_stream(3, 1, i));
    const VectorizedDraws out = vectorized_product_sample(batch, streams, 2, 100000);
    Xoshiro256 rng = make_stream(3, 1, i);
    EXPECT_EQ(out.draws[0], product_sample(s, rng, 100000));
  }
}

TEST(VectorizedSampler, DistributionMatchesPerPointSampler) {
  const auto configs = configurations();
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const Config& cfg = configs[c];
    const TiltedSampler s = build_tilted_sampler(cfg.lik, cfg.y, cfg.mean, cfg.variance);
    const int n = 100000;
    std::vector<TiltedSampler> batch(n, s);
    std::vector<Xoshiro256> streams;
    streams.reserve(n);
    for (int i = 0; i < n; ++i) streams.push_back(make_stream(100 + c, 7, i));
    const VectorizedDraws pooled = vectorized_product_sample(batch, streams, 2, 100000);
    const auto single = draw_many(s, n, 500 + c);
    EXPECT_GT(ks_two_sample_pvalue(pooled.draws, single), 0.01) << to_string(cfg.lik.kind);
  }
}

TEST(SamplerTelemetry, MergeAddsCounts) {
  SamplerTelemetry a, b;
  a.accepted = 3;
  a.record_width(2);
  b.accepted = 4;
  b.rejected = 1;
  b.record_width(5);
  b.record_mean_likelihood(0.2);
  a.merge(b);
  EXPECT_EQ(a.accepted, 7u);
  EXPECT_EQ(a.rejected, 1u);
  EXPECT_EQ(a.chosen_widths[2], 1u);
  EXPECT_EQ(a.chosen_widths[5], 1u);
  EXPECT_TRUE(a.has_min_mean_likelihood);
  EXPECT_DOUBLE_EQ(a.min_mean_likelihood, 0.2);
}
