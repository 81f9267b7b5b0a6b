#include <algorithm>
#include <cmath>
#include <limits>

#include "tables.hpp"

namespace dlmgp::simd {
namespace {

void scaled_sq_dist(const double* x, const double* z,
                    const double* inv_lengthscale, std::size_t dim,
                    std::size_t rows, double* out) {
  for (std::size_t j = 0; j < rows; ++j) {
    const double* zj = z + j * dim;
    double acc = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = (x[k] - zj[k]) * inv_lengthscale[k];
      acc += diff * diff;
    }
    out[j] = acc;
  }
}

void rbf_from_sq_dist(const double* sq_dist, double scale, std::size_t count,
                      double* out) {
  for (std::size_t j = 0; j < count; ++j) {
    out[j] = scale * std::exp(-0.5 * sq_dist[j]);
  }
}

void exp_inplace(double* values, std::size_t count) {
  for (std::size_t j = 0; j < count; ++j) values[j] = std::exp(values[j]);
}

double dot(const double* a, const double* b, std::size_t count) {
  double acc = 0.0;
  for (std::size_t j = 0; j < count; ++j) acc += a[j] * b[j];
  return acc;
}

RatioSums weighted_ratio_sums(const double* log_phi, const double* r1,
                              const double* r2, std::size_t count) {
  RatioSums sums;
  sums.max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < count; ++j) {
    sums.max_log = std::max(sums.max_log, log_phi[j]);
  }
  if (!std::isfinite(sums.max_log)) return sums;
  for (std::size_t j = 0; j < count; ++j) {
    const double w = std::exp(log_phi[j] - sums.max_log);
    sums.sum_w += w;
    sums.sum_w_r1 += w * r1[j];
    sums.sum_w_r2 += w * r2[j];
  }
  return sums;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{scaled_sq_dist, rbf_from_sq_dist, exp_inplace,
                                 dot, weighted_ratio_sums};
  return table;
}

}  // namespace dlmgp::simd
