// AArch64 always has Advanced SIMD with float64 lanes, so no runtime probe.
#include <arm_neon.h>

#include "qeot/kernels.hpp"

namespace qeot::kernels {
namespace {

double dot_neon(const double* x, const double* y, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(x + i), vld1q_f64(y + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t a = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), a, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_neon(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_neon(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void gemm_nn_neon(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    double* crow = c + i * ldc;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      float64x2_t r0, r1, r2, r3;
      if (accumulate) {
        r0 = vld1q_f64(crow + j);
        r1 = vld1q_f64(crow + j + 2);
        r2 = vld1q_f64(crow + j + 4);
        r3 = vld1q_f64(crow + j + 6);
      } else {
        r0 = r1 = r2 = r3 = vdupq_n_f64(0.0);
      }
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * ldb + j;
        const float64x2_t av = vdupq_n_f64(arow[p]);
        r0 = vfmaq_f64(r0, av, vld1q_f64(brow));
        r1 = vfmaq_f64(r1, av, vld1q_f64(brow + 2));
        r2 = vfmaq_f64(r2, av, vld1q_f64(brow + 4));
        r3 = vfmaq_f64(r3, av, vld1q_f64(brow + 6));
      }
      vst1q_f64(crow + j, r0);
      vst1q_f64(crow + j + 2, r1);
      vst1q_f64(crow + j + 4, r2);
      vst1q_f64(crow + j + 6, r3);
    }
    for (; j < n; ++j) {
      double s = accumulate ? crow[j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * b[p * ldb + j];
      crow[j] = s;
    }
  }
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable table{Isa::kNeon, dot_neon, axpy_neon, add_neon, mul_neon, gemm_nn_neon};
  return &table;
}

}  // namespace qeot::kernels
