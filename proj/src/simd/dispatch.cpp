#include <atomic>
#include <cstdlib>
#include <string_view>

#include "dlmgp/errors.hpp"
#include "tables.hpp"

namespace dlmgp::simd {
namespace {

bool cpu_has_avx2() {
#if defined(DLMGP_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  const Isa best = cpu_has_avx2() ? Isa::kAvx2 : Isa::kScalar;
  if (const char* env = std::getenv("DLMGP_SIMD")) {
    if (std::string_view(env) == "scalar") return Isa::kScalar;
  }
  return best;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

inline const KernelTable& current() { return table_for(active().load()); }

}  // namespace

const char* isa_name(Isa isa) {
  return isa == Isa::kAvx2 ? "avx2" : "scalar";
}

Isa detected_isa() { return cpu_has_avx2() ? Isa::kAvx2 : Isa::kScalar; }

Isa active_isa() { return active().load(); }

void set_isa(Isa isa) {
  if (isa == Isa::kAvx2 && !cpu_has_avx2()) {
    throw InputError("AVX2 kernels requested but not supported on this CPU");
  }
  active().store(isa);
}

const KernelTable& table_for(Isa isa) {
#if defined(DLMGP_HAVE_AVX2)
  if (isa == Isa::kAvx2) return avx2_table();
#endif
  (void)isa;
  return scalar_table();
}

void scaled_sq_dist(std::span<const double> x, std::span<const double> z,
                    std::span<const double> inv_lengthscale,
                    std::span<double> out) {
  current().scaled_sq_dist(x.data(), z.data(), inv_lengthscale.data(),
                           x.size(), out.size(), out.data());
}

void rbf_from_sq_dist(std::span<const double> sq_dist, double scale,
                      std::span<double> out) {
  current().rbf_from_sq_dist(sq_dist.data(), scale, out.size(), out.data());
}

void exp_inplace(std::span<double> values) {
  current().exp_inplace(values.data(), values.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
  return current().dot(a.data(), b.data(), a.size());
}

RatioSums weighted_ratio_sums(std::span<const double> log_phi,
                              std::span<const double> r1,
                              std::span<const double> r2) {
  return current().weighted_ratio_sums(log_phi.data(), r1.data(), r2.data(),
                                       log_phi.size());
}

}  // namespace dlmgp::simd
