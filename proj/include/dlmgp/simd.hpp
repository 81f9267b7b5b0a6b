#pragma once

// Data-parallel inner loops shared by the kernel and estimator code. Each
// routine has a portable scalar reference implementation and an AVX2 variant;
// the variant is chosen once at startup from CPU feature bits and can be
// overridden (tests pin both and compare).

#include <span>

namespace dlmgp::simd {

enum class Isa { kScalar, kAvx2 };

const char* isa_name(Isa isa);

// Best ISA the running CPU supports (and this build compiled in).
Isa detected_isa();
// ISA used by the dispatching entry points below.
Isa active_isa();
// Throws InputError if `isa` is not supported on this machine. The
// DLMGP_SIMD environment variable ("scalar" | "avx2") sets the initial value.
void set_isa(Isa isa);

// Per-sample accumulators of a max-shifted weighted ratio:
//   w_l = exp(log_phi_l - max_log),
//   sum_w = sum w_l, sum_w_r1 = sum w_l r1_l, sum_w_r2 = sum w_l r2_l.
struct RatioSums {
  double max_log = 0.0;
  double sum_w = 0.0;
  double sum_w_r1 = 0.0;
  double sum_w_r2 = 0.0;
};

// out[j] = sum_k ((x[k] - z[j*dim + k]) * inv_lengthscale[k])^2, where z is a
// row-major (out.size() x dim) matrix and dim = x.size().
void scaled_sq_dist(std::span<const double> x, std::span<const double> z,
                    std::span<const double> inv_lengthscale,
                    std::span<double> out);

// out[j] = scale * exp(-0.5 * sq_dist[j]); out may alias sq_dist.
void rbf_from_sq_dist(std::span<const double> sq_dist, double scale,
                      std::span<double> out);

void exp_inplace(std::span<double> values);

double dot(std::span<const double> a, std::span<const double> b);

RatioSums weighted_ratio_sums(std::span<const double> log_phi,
                              std::span<const double> r1,
                              std::span<const double> r2);

// Function table implemented once per ISA.
struct KernelTable {
  void (*scaled_sq_dist)(const double* x, const double* z,
                         const double* inv_lengthscale, std::size_t dim,
                         std::size_t rows, double* out);
  void (*rbf_from_sq_dist)(const double* sq_dist, double scale,
                           std::size_t count, double* out);
  void (*exp_inplace)(double* values, std::size_t count);
  double (*dot)(const double* a, const double* b, std::size_t count);
  RatioSums (*weighted_ratio_sums)(const double* log_phi, const double* r1,
                                   const double* r2, std::size_t count);
};

// Direct access to a specific implementation, bypassing dispatch.
const KernelTable& table_for(Isa isa);

}  // namespace dlmgp::simd
