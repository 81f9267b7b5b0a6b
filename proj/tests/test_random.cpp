#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "dlmgp/random.hpp"

using namespace dlmgp;

TEST(Random, SameSeedSameSequence) {
  Xoshiro256 a(42), b(42);
  for (int k = 0; k < 100; ++k) EXPECT_EQ(a(), b());
}

TEST(Random, StreamsDifferByKey) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t e = 0; e < 4; ++e) {
    for (std::uint64_t i = 0; i < 50; ++i) firsts.insert(make_stream(7, e, i)());
  }
  EXPECT_EQ(firsts.size(), 200u);
  EXPECT_EQ(make_stream(7, 1, 3)(), make_stream(7, 1, 3)());
}

TEST(Random, UniformInUnitInterval) {
  Xoshiro256 rng(1);
  double sum = 0.0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(Random, NormalMoments) {
  Xoshiro256 rng(2);
  const int n = 400000;
  double s1 = 0.0, s2 = 0.0, s4 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double z = rng.normal();
    s1 += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  EXPECT_NEAR(s1 / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(s4 / n, 3.0, 4.0 * std::sqrt(96.0 / n));
}
