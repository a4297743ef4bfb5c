// Compiled with -mavx2 -mfma; only reached after the CPUID check in dispatch.cpp.
#include <immintrin.h>

#include "qeot/kernels.hpp"

namespace qeot::kernels {
namespace {

double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_avx2(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_avx2(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

// Two rows of C by sixteen columns held in eight accumulators.
void block_2x16(std::size_t k, const double* a0, const double* a1, const double* b,
                std::size_t ldb, double* c0, double* c1, bool accumulate) {
  __m256d r00, r01, r02, r03, r10, r11, r12, r13;
  if (accumulate) {
    r00 = _mm256_loadu_pd(c0);
    r01 = _mm256_loadu_pd(c0 + 4);
    r02 = _mm256_loadu_pd(c0 + 8);
    r03 = _mm256_loadu_pd(c0 + 12);
    r10 = _mm256_loadu_pd(c1);
    r11 = _mm256_loadu_pd(c1 + 4);
    r12 = _mm256_loadu_pd(c1 + 8);
    r13 = _mm256_loadu_pd(c1 + 12);
  } else {
    r00 = r01 = r02 = r03 = r10 = r11 = r12 = r13 = _mm256_setzero_pd();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    const __m256d b0 = _mm256_loadu_pd(brow);
    const __m256d b1 = _mm256_loadu_pd(brow + 4);
    const __m256d b2 = _mm256_loadu_pd(brow + 8);
    const __m256d b3 = _mm256_loadu_pd(brow + 12);
    const __m256d x0 = _mm256_broadcast_sd(a0 + p);
    const __m256d x1 = _mm256_broadcast_sd(a1 + p);
    r00 = _mm256_fmadd_pd(x0, b0, r00);
    r01 = _mm256_fmadd_pd(x0, b1, r01);
    r02 = _mm256_fmadd_pd(x0, b2, r02);
    r03 = _mm256_fmadd_pd(x0, b3, r03);
    r10 = _mm256_fmadd_pd(x1, b0, r10);
    r11 = _mm256_fmadd_pd(x1, b1, r11);
    r12 = _mm256_fmadd_pd(x1, b2, r12);
    r13 = _mm256_fmadd_pd(x1, b3, r13);
  }
  _mm256_storeu_pd(c0, r00);
  _mm256_storeu_pd(c0 + 4, r01);
  _mm256_storeu_pd(c0 + 8, r02);
  _mm256_storeu_pd(c0 + 12, r03);
  _mm256_storeu_pd(c1, r10);
  _mm256_storeu_pd(c1 + 4, r11);
  _mm256_storeu_pd(c1 + 8, r12);
  _mm256_storeu_pd(c1 + 12, r13);
}

// One row of C by four columns.
void block_1x4(std::size_t k, const double* a0, const double* b, std::size_t ldb, double* c0,
               bool accumulate) {
  __m256d r = accumulate ? _mm256_loadu_pd(c0) : _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    r = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + p), _mm256_loadu_pd(b + p * ldb), r);
  }
  _mm256_storeu_pd(c0, r);
}

void tail_columns(std::size_t k, const double* a0, const double* b, std::size_t ldb, double* c0,
                  std::size_t ncols, bool accumulate) {
  for (std::size_t j = 0; j < ncols; ++j) {
    double s = accumulate ? c0[j] : 0.0;
    for (std::size_t p = 0; p < k; ++p) s += a0[p] * b[p * ldb + j];
    c0[j] = s;
  }
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  const std::size_t n16 = n - n % 16;
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    const double* a0 = a + i * lda;
    const double* a1 = a0 + lda;
    double* c0 = c + i * ldc;
    double* c1 = c0 + ldc;
    for (std::size_t j = 0; j < n16; j += 16) {
      block_2x16(k, a0, a1, b + j, ldb, c0 + j, c1 + j, accumulate);
    }
    std::size_t j = n16;
    for (; j + 4 <= n; j += 4) {
      block_1x4(k, a0, b + j, ldb, c0 + j, accumulate);
      block_1x4(k, a1, b + j, ldb, c1 + j, accumulate);
    }
    tail_columns(k, a0, b + j, ldb, c0 + j, n - j, accumulate);
    tail_columns(k, a1, b + j, ldb, c1 + j, n - j, accumulate);
  }
  for (; i < m; ++i) {
    const double* a0 = a + i * lda;
    double* c0 = c + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) block_1x4(k, a0, b + j, ldb, c0 + j, accumulate);
    tail_columns(k, a0, b + j, ldb, c0 + j, n - j, accumulate);
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{Isa::kAvx2, dot_avx2, axpy_avx2, add_avx2, mul_avx2, gemm_nn_avx2};
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported ? &table : nullptr;
}

}  // namespace qeot::kernels
