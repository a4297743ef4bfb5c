#pragma once

// Dense float64 inner loops used by the tensor engine.
//
// Every kernel has a portable scalar reference implementation and, where the
// target has one, a vectorized variant (AVX2+FMA on x86-64, NEON on AArch64).
// The active table is chosen once at startup from CPUID; set QEOT_ISA=scalar
// in the environment to force the reference path. Vector variants reassociate
// sums and use fused multiply-add, so results agree with the reference to a
// few ulps rather than bit-for-bit; within one variant every call is
// deterministic.

#include <cstddef>
#include <string_view>

namespace qeot::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out[i] = x[i] + y[i]
  void (*add)(const double* x, const double* y, double* out, std::size_t n);
  // out[i] = x[i] * y[i]
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
  // C[m,n] (+)= A[m,k] * B[k,n], all row-major with leading dimensions.
  // When accumulate is false C is overwritten.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
};

const KernelTable& scalar_table();

// nullptr when the variant was not compiled in or the CPU lacks support.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// The table selected for this process.
const KernelTable& active();

// Overrides the selection (tests only). Returns the previous table.
const KernelTable& set_active(const KernelTable& table);

}  // namespace qeot::kernels
