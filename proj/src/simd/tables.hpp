#pragma once

#include "dlmgp/simd.hpp"

namespace dlmgp::simd {

const KernelTable& scalar_table();
#if defined(DLMGP_HAVE_AVX2)
const KernelTable& avx2_table();
#endif

}  // namespace dlmgp::simd
