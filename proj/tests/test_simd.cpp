#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <vector>

#include "dlmgp/random.hpp"
#include "dlmgp/simd.hpp"

using namespace dlmgp;

namespace {

bool avx2_available() { return simd::detected_isa() == simd::Isa::kAvx2; }

std::vector<double> random_vector(std::size_t n, double scale, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = scale * rng.normal();
  return out;
}

double rel(double a, double b) {
  return std::abs(a - b) / std::max(1e-300, std::max(std::abs(a), std::abs(b)));
}

}  // namespace

TEST(Simd, ScalarExpMatchesStd) {
  const auto& scalar = simd::table_for(simd::Isa::kScalar);
  auto v = random_vector(37, 10.0, 1);
  auto ref = v;
  scalar.exp_inplace(v.data(), v.size());
  for (std::size_t k = 0; k < v.size(); ++k) EXPECT_EQ(v[k], std::exp(ref[k]));
}

TEST(Simd, Avx2ExpIsAccurate) {
  if (!avx2_available()) GTEST_SKIP() << "AVX2 not supported on this CPU";
  const auto& avx = simd::table_for(simd::Isa::kAvx2);
  std::vector<double> v;
  for (double x = -745.0; x <= 709.0; x += 0.37) v.push_back(x);
  auto ref = v;
  avx.exp_inplace(v.data(), v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double expect = std::exp(ref[k]);
    if (ref[k] < -708.39) {
      EXPECT_EQ(v[k], 0.0) << ref[k];
    } else {
      EXPECT_LE(rel(v[k], expect), 4e-15) << ref[k];
    }
  }
}

TEST(Simd, Avx2ExpHandlesExtremes) {
  if (!avx2_available()) GTEST_SKIP();
  const auto& avx = simd::table_for(simd::Isa::kAvx2);
  std::vector<double> v = {-std::numeric_limits<double>::infinity(), -1e6, 0.0, 1e-300};
  avx.exp_inplace(v.data(), v.size());
  EXPECT_EQ(v[0], 0.0);
  EXPECT_EQ(v[1], 0.0);
  EXPECT_EQ(v[2], 1.0);
  EXPECT_EQ(v[3], 1.0);
}

class SimdEquivalence : public ::testing::TestWithParam<std::size_t> {};

TEST_P(SimdEquivalence, KernelsAgreeAcrossIsas) {
  if (!avx2_available()) GTEST_SKIP();
  const auto& s = simd::table_for(simd::Isa::kScalar);
  const auto& a = simd::table_for(simd::Isa::kAvx2);
  const std::size_t rows = GetParam();
  for (std::size_t dim : {1u, 2u, 3u, 5u, 9u}) {
    auto x = random_vector(dim, 1.0, 10 + dim);
    auto z = random_vector(rows * dim, 1.0, 20 + dim);
    auto inv = random_vector(dim, 1.0, 30 + dim);
    for (auto& w : inv) w = std::abs(w) + 0.1;
    std::vector<double> out_s(rows), out_a(rows);
    s.scaled_sq_dist(x.data(), z.data(), inv.data(), dim, rows, out_s.data());
    a.scaled_sq_dist(x.data(), z.data(), inv.data(), dim, rows, out_a.data());
    for (std::size_t j = 0; j < rows; ++j) EXPECT_LE(rel(out_s[j], out_a[j]), 1e-13);

    s.rbf_from_sq_dist(out_s.data(), 1.7, rows, out_s.data());
    a.rbf_from_sq_dist(out_a.data(), 1.7, rows, out_a.data());
    for (std::size_t j = 0; j < rows; ++j) EXPECT_LE(rel(out_s[j], out_a[j]), 1e-13);
  }
  auto p = random_vector(rows, 1.0, 40);
  auto q = random_vector(rows, 1.0, 41);
  double ref = 0.0;
  for (std::size_t k = 0; k < rows; ++k) ref += p[k] * q[k];
  EXPECT_NEAR(s.dot(p.data(), q.data(), rows), ref, 1e-12 * rows);
  EXPECT_NEAR(a.dot(p.data(), q.data(), rows), ref, 1e-12 * rows);

  auto logp = random_vector(rows, 30.0, 42);
  auto r1 = random_vector(rows, 1.0, 43);
  auto r2 = random_vector(rows, 1.0, 44);
  const auto ss = s.weighted_ratio_sums(logp.data(), r1.data(), r2.data(), rows);
  const auto sa = a.weighted_ratio_sums(logp.data(), r1.data(), r2.data(), rows);
  EXPECT_EQ(ss.max_log, sa.max_log);
  EXPECT_LE(rel(ss.sum_w, sa.sum_w), 1e-12);
  EXPECT_NEAR(ss.sum_w_r1, sa.sum_w_r1, 1e-12 * (1.0 + std::abs(ss.sum_w_r1)) * rows);
  EXPECT_NEAR(ss.sum_w_r2, sa.sum_w_r2, 1e-12 * (1.0 + std::abs(ss.sum_w_r2)) * rows);
}

INSTANTIATE_TEST_SUITE_P(Lengths, SimdEquivalence,
                         ::testing::Values(1u, 3u, 4u, 7u, 8u, 16u, 33u, 100u));

TEST(Simd, RatioSumsUseMaxShift) {
  const std::vector<double> logp = {-1000.0, -1001.0};
  const std::vector<double> r1 = {1.0, 3.0};
  const std::vector<double> r2 = {0.0, 0.0};
  const auto sums = simd::weighted_ratio_sums(logp, r1, r2);
  EXPECT_EQ(sums.max_log, -1000.0);
  EXPECT_NEAR(sums.sum_w, 1.0 + std::exp(-1.0), 1e-15);
  EXPECT_NEAR(sums.sum_w_r1 / sums.sum_w,
              (1.0 + 3.0 * std::exp(-1.0)) / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(Simd, AllZeroLikelihoodsGiveZeroSums) {
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::vector<double> logp = {ninf, ninf, ninf, ninf, ninf};
  const std::vector<double> r(5, 1.0);
  for (auto isa : {simd::Isa::kScalar, simd::Isa::kAvx2}) {
    if (isa == simd::Isa::kAvx2 && !avx2_available()) continue;
    const auto sums =
        simd::table_for(isa).weighted_ratio_sums(logp.data(), r.data(), r.data(), 5);
    EXPECT_EQ(sums.sum_w, 0.0);
    EXPECT_EQ(sums.sum_w_r1, 0.0);
  }
}

TEST(Simd, SetIsaSwitchesDispatch) {
  const simd::Isa before = simd::active_isa();
  simd::set_isa(simd::Isa::kScalar);
  EXPECT_EQ(simd::active_isa(), simd::Isa::kScalar);
  std::vector<double> v = {0.5};
  simd::exp_inplace(v);
  EXPECT_EQ(v[0], std::exp(0.5));
  simd::set_isa(before);
  EXPECT_EQ(simd::active_isa(), before);
}
