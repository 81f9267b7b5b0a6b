#if defined(DLMGP_HAVE_AVX2)

#include <immintrin.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "tables.hpp"

namespace dlmgp::simd {
namespace {

// Cephes-style exp: range reduction by ln 2 in two parts, rational
// approximation on [-ln2/2, ln2/2], then scaling by 2^n through the exponent
// bits. Inputs below the double underflow threshold map to exactly 0.
inline __m256d exp_pd(__m256d x) {
  const __m256d upper = _mm256_set1_pd(709.0);
  const __m256d lower = _mm256_set1_pd(-708.39);
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125E-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212E-6);
  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878E-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300E-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910E-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042E-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192E-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766E-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000009E0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);

  const __m256d underflow = _mm256_cmp_pd(x, lower, _CMP_LT_OQ);
  x = _mm256_min_pd(_mm256_max_pd(x, lower), upper);

  const __m256d fx = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                     _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  x = _mm256_fnmadd_pd(fx, c1, x);
  x = _mm256_fnmadd_pd(fx, c2, x);

  const __m256d xx = _mm256_mul_pd(x, x);
  __m256d px = _mm256_fmadd_pd(p0, xx, p1);
  px = _mm256_fmadd_pd(px, xx, p2);
  px = _mm256_mul_pd(px, x);
  __m256d qx = _mm256_fmadd_pd(q0, xx, q1);
  qx = _mm256_fmadd_pd(qx, xx, q2);
  qx = _mm256_fmadd_pd(qx, xx, q3);
  __m256d r = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  r = _mm256_fmadd_pd(two, r, one);

  __m256i n = _mm256_cvtepi32_epi64(_mm256_cvtpd_epi32(fx));
  n = _mm256_add_epi64(n, _mm256_set1_epi64x(1023));
  n = _mm256_slli_epi64(n, 52);
  r = _mm256_mul_pd(r, _mm256_castsi256_pd(n));
  return _mm256_andnot_pd(underflow, r);
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double hmax(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d m = _mm_max_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_max_sd(m, _mm_unpackhi_pd(m, m)));
}

void scaled_sq_dist(const double* x, const double* z,
                    const double* inv_lengthscale, std::size_t dim,
                    std::size_t rows, double* out) {
  const long long stride = static_cast<long long>(dim);
  const __m256i offsets =
      _mm256_set_epi64x(3 * stride, 2 * stride, stride, 0);
  std::size_t j = 0;
  for (; j + 4 <= rows; j += 4) {
    __m256d acc = _mm256_setzero_pd();
    const double* base = z + j * dim;
    for (std::size_t k = 0; k < dim; ++k) {
      const __m256d zk = _mm256_i64gather_pd(base + k, offsets, 8);
      const __m256d diff = _mm256_mul_pd(
          _mm256_sub_pd(_mm256_set1_pd(x[k]), zk),
          _mm256_set1_pd(inv_lengthscale[k]));
      acc = _mm256_fmadd_pd(diff, diff, acc);
    }
    _mm256_storeu_pd(out + j, acc);
  }
  for (; j < rows; ++j) {
    const double* zj = z + j * dim;
    double acc = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = (x[k] - zj[k]) * inv_lengthscale[k];
      acc += diff * diff;
    }
    out[j] = acc;
  }
}

void exp_inplace(double* values, std::size_t count) {
  std::size_t j = 0;
  for (; j + 4 <= count; j += 4) {
    _mm256_storeu_pd(values + j, exp_pd(_mm256_loadu_pd(values + j)));
  }
  if (j < count) {
    alignas(32) std::array<double, 4> tail{};
    std::copy(values + j, values + count, tail.begin());
    _mm256_store_pd(tail.data(), exp_pd(_mm256_load_pd(tail.data())));
    std::copy(tail.begin(), tail.begin() + (count - j), values + j);
  }
}

void rbf_from_sq_dist(const double* sq_dist, double scale, std::size_t count,
                      double* out) {
  const __m256d neg_half = _mm256_set1_pd(-0.5);
  const __m256d vscale = _mm256_set1_pd(scale);
  std::size_t j = 0;
  for (; j + 4 <= count; j += 4) {
    const __m256d arg = _mm256_mul_pd(neg_half, _mm256_loadu_pd(sq_dist + j));
    _mm256_storeu_pd(out + j, _mm256_mul_pd(vscale, exp_pd(arg)));
  }
  if (j < count) {
    alignas(32) std::array<double, 4> tail{};
    for (std::size_t k = j; k < count; ++k) tail[k - j] = -0.5 * sq_dist[k];
    _mm256_store_pd(tail.data(),
                    _mm256_mul_pd(vscale, exp_pd(_mm256_load_pd(tail.data()))));
    std::copy(tail.begin(), tail.begin() + (count - j), out + j);
  }
}

double dot(const double* a, const double* b, std::size_t count) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t j = 0;
  for (; j + 4 <= count; j += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + j), _mm256_loadu_pd(b + j), acc);
  }
  double total = hsum(acc);
  for (; j < count; ++j) total += a[j] * b[j];
  return total;
}

RatioSums weighted_ratio_sums(const double* log_phi, const double* r1,
                              const double* r2, std::size_t count) {
  RatioSums sums;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  __m256d vmax = _mm256_set1_pd(kNegInf);
  std::size_t j = 0;
  for (; j + 4 <= count; j += 4) {
    vmax = _mm256_max_pd(vmax, _mm256_loadu_pd(log_phi + j));
  }
  double max_log = hmax(vmax);
  for (; j < count; ++j) max_log = std::max(max_log, log_phi[j]);
  sums.max_log = max_log;
  if (!std::isfinite(max_log)) return sums;

  const __m256d shift = _mm256_set1_pd(max_log);
  __m256d acc_w = _mm256_setzero_pd();
  __m256d acc_r1 = _mm256_setzero_pd();
  __m256d acc_r2 = _mm256_setzero_pd();
  j = 0;
  for (; j + 4 <= count; j += 4) {
    const __m256d w =
        exp_pd(_mm256_sub_pd(_mm256_loadu_pd(log_phi + j), shift));
    acc_w = _mm256_add_pd(acc_w, w);
    acc_r1 = _mm256_fmadd_pd(w, _mm256_loadu_pd(r1 + j), acc_r1);
    acc_r2 = _mm256_fmadd_pd(w, _mm256_loadu_pd(r2 + j), acc_r2);
  }
  if (j < count) {
    alignas(32) std::array<double, 4> lp;
    alignas(32) std::array<double, 4> t1{};
    alignas(32) std::array<double, 4> t2{};
    lp.fill(kNegInf);
    for (std::size_t k = j; k < count; ++k) {
      lp[k - j] = log_phi[k];
      t1[k - j] = r1[k];
      t2[k - j] = r2[k];
    }
    const __m256d w = exp_pd(_mm256_sub_pd(_mm256_load_pd(lp.data()), shift));
    acc_w = _mm256_add_pd(acc_w, w);
    acc_r1 = _mm256_fmadd_pd(w, _mm256_load_pd(t1.data()), acc_r1);
    acc_r2 = _mm256_fmadd_pd(w, _mm256_load_pd(t2.data()), acc_r2);
  }
  sums.sum_w = hsum(acc_w);
  sums.sum_w_r1 = hsum(acc_r1);
  sums.sum_w_r2 = hsum(acc_r2);
  return sums;
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{scaled_sq_dist, rbf_from_sq_dist, exp_inplace,
                                 dot, weighted_ratio_sums};
  return table;
}

}  // namespace dlmgp::simd

#endif  // DLMGP_HAVE_AVX2
