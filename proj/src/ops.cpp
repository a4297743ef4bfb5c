#include "qeot/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qeot/errors.hpp"
#include "qeot/kernels.hpp"

namespace qeot {
namespace {

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> sa;
  std::vector<std::size_t> sb;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.resize(r);
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  const auto stra = contiguous_strides(a);
  const auto strb = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t oa = r - a.size();
    const std::size_t ob = r - b.size();
    const std::size_t da = i >= oa ? a[i - oa] : 1;
    const std::size_t db = i >= ob ? b[i - ob] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    }
    p.out[i] = std::max(da, db);
    if (i >= oa && da != 1) p.sa[i] = stra[i - oa];
    if (i >= ob && db != 1) p.sb[i] = strb[i - ob];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void broadcast_loop(const BroadcastPlan& p, F&& f) {
  const std::size_t r = p.out.size();
  const std::size_t inner = p.out[r - 1];
  const std::size_t sai = p.sa[r - 1];
  const std::size_t sbi = p.sb[r - 1];
  const std::size_t outer = shape_numel(p.out) / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * inner;
    for (std::size_t j = 0; j < inner; ++j) f(base + j, oa + j * sai, ob + j * sbi);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += p.sa[d];
      ob += p.sb[d];
      if (idx[d] < p.out[d]) break;
      oa -= p.sa[d] * p.out[d];
      ob -= p.sb[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

void accumulate(std::vector<double>& dst, std::span<const double> src) {
  kernels::active().axpy(1.0, src.data(), dst.data(), src.size());
}

void transpose_into(const double* src, std::size_t rows, std::size_t cols, double* dst) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
}

// C[m,n] (+)= A[m,k] B[k,n], contiguous operands.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
          bool accumulate) {
  kernels::active().gemm_nn(m, n, k, a, k, b, n, c, n, accumulate);
}

// dA[m,k] += G[m,n] B[k,n]^T
void gemm_grad_a(std::size_t m, std::size_t n, std::size_t k, const double* g, const double* b,
                 double* ga, std::vector<double>& scratch) {
  scratch.resize(n * k);
  transpose_into(b, k, n, scratch.data());
  gemm(m, k, n, g, scratch.data(), ga, true);
}

// dB[k,n] += A[m,k]^T G[m,n]
void gemm_grad_b(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* g,
                 double* gb, std::vector<double>& scratch) {
  scratch.resize(m * k);
  transpose_into(a, m, k, scratch.data());
  gemm(k, n, m, scratch.data(), g, gb, true);
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  const auto& kt = kernels::active();
  if (a.shape() == b.shape()) {
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    switch (kind) {
      case BinaryKind::kAdd:
        kt.add(a.data().data(), b.data().data(), out.data(), n);
        break;
      case BinaryKind::kSub:
        for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] - b.data()[i];
        break;
      case BinaryKind::kMul:
        kt.mul(a.data().data(), b.data().data(), out.data(), n);
        break;
    }
    return make_result(name, a.shape(), std::move(out), {a, b}, [kind](Node& self) {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      const auto& kt = kernels::active();
      const std::size_t n = self.grad.size();
      if (kind == BinaryKind::kMul) {
        if (na.requires_grad) {
          auto& ga = na.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * nb.value[i];
        }
        if (nb.requires_grad) {
          auto& gb = nb.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i] * na.value[i];
        }
        return;
      }
      if (na.requires_grad) kt.axpy(1.0, self.grad.data(), na.ensure_grad().data(), n);
      if (nb.requires_grad) {
        kt.axpy(kind == BinaryKind::kSub ? -1.0 : 1.0, self.grad.data(), nb.ensure_grad().data(), n);
      }
    });
  }

  BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), name);
  std::vector<double> out(shape_numel(plan.out));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  switch (kind) {
    case BinaryKind::kAdd:
      broadcast_loop(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = pa[ia] + pb[ib]; });
      break;
    case BinaryKind::kSub:
      broadcast_loop(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = pa[ia] - pb[ib]; });
      break;
    case BinaryKind::kMul:
      broadcast_loop(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = pa[ia] * pb[ib]; });
      break;
  }
  Shape out_shape = plan.out;
  return make_result(name, std::move(out_shape), std::move(out), {a, b},
                     [kind, plan = std::move(plan)](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       const double* g = self.grad.data();
                       if (na.requires_grad) {
                         double* ga = na.ensure_grad().data();
                         if (kind == BinaryKind::kMul) {
                           const double* vb = nb.value.data();
                           broadcast_loop(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                             ga[ia] += g[o] * vb[ib];
                           });
                         } else {
                           broadcast_loop(plan, [&](std::size_t o, std::size_t ia, std::size_t) { ga[ia] += g[o]; });
                         }
                       }
                       if (nb.requires_grad) {
                         double* gb = nb.ensure_grad().data();
                         if (kind == BinaryKind::kMul) {
                           const double* va = na.value.data();
                           broadcast_loop(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                             gb[ib] += g[o] * va[ia];
                           });
                         } else {
                           const double sign = kind == BinaryKind::kSub ? -1.0 : 1.0;
                           broadcast_loop(plan, [&](std::size_t o, std::size_t, std::size_t ib) {
                             gb[ib] += sign * g[o];
                           });
                         }
                       }
                     });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(name, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    Node& nx = *self.inputs[0];
    auto& gx = nx.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * deriv(nx.value[i], self.value[i]);
    }
  });
}

struct AxisSplit {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t n = b.dim(-1);
  if (b.dim(-2) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " @ " +
                         shape_str(b.shape()));
  }

  if (b.rank() == 2) {
    // Shared right operand: fold all leading dimensions of a into rows.
    const std::size_t rows = a.numel() / k;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    std::vector<double> out(rows * n);
    gemm(rows, n, k, a.data().data(), b.data().data(), out.data(), false);
    return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                       [rows, n, k](Node& self) {
                         Node& na = *self.inputs[0];
                         Node& nb = *self.inputs[1];
                         std::vector<double> scratch;
                         if (na.requires_grad) {
                           gemm_grad_a(rows, n, k, self.grad.data(), nb.value.data(),
                                       na.ensure_grad().data(), scratch);
                         }
                         if (nb.requires_grad) {
                           gemm_grad_b(rows, n, k, na.value.data(), self.grad.data(),
                                       nb.ensure_grad().data(), scratch);
                         }
                       });
  }

  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  if (batch_a.empty()) batch_a = {1};
  BroadcastPlan plan;
  try {
    plan = plan_broadcast(batch_a, batch_b, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch dimensions differ for " + shape_str(a.shape()) + " @ " +
                         shape_str(b.shape()));
  }
  Shape out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(shape_numel(out_shape));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  broadcast_loop(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    gemm(m, n, k, pa + ia * m * k, pb + ib * k * n, out.data() + o * m * n, false);
  });
  return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                     [plan = std::move(plan), m, n, k](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       std::vector<double> scratch;
                       const double* g = self.grad.data();
                       if (na.requires_grad) {
                         double* ga = na.ensure_grad().data();
                         broadcast_loop(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                           gemm_grad_a(m, n, k, g + o * m * n, nb.value.data() + ib * k * n,
                                       ga + ia * m * k, scratch);
                         });
                       }
                       if (nb.requires_grad) {
                         double* gb = nb.ensure_grad().data();
                         broadcast_loop(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                           gemm_grad_b(m, n, k, na.value.data() + ia * m * k, g + o * m * n,
                                       gb + ib * k * n, scratch);
                         });
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> perm(x.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw DimensionError("permute: rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> used(r, false);
  for (std::size_t p : perm) {
    if (p >= r || used[p]) throw DimensionError("permute: invalid permutation");
    used[p] = true;
  }
  const auto in_strides = contiguous_strides(x.shape());
  Shape out_shape(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  // map[o] = source offset of output element o
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < n; ++o) {
      map[o] = off;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        off += src_stride[d];
        if (idx[d] < out_shape[d]) break;
        off -= src_stride[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  std::vector<double> out(n);
  const auto in = x.data();
  for (std::size_t o = 0; o < n; ++o) out[o] = in[map[o]];
  return make_result("permute", std::move(out_shape), std::move(out), {x},
                     [map = std::move(map)](Node& self) {
                       auto& gx = self.inputs[0]->ensure_grad();
                       for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += self.grad[o];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    accumulate(self.inputs[0]->ensure_grad(), self.grad);
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= s;
  return make_result("scale", x.shape(), std::move(out), {x}, [s](Node& self) {
    kernels::active().axpy(s, self.grad.data(), self.inputs[0]->ensure_grad().data(),
                           self.grad.size());
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double in, double) { return 1.0 / in; });
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  const auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(in[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] *= inv;
    }
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [s](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) {
          dot += g[base + j * s.inner] * y[base + j * s.inner];
        }
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  const auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) z += std::exp(in[base + j * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] = in[base + j * s.inner] - lse;
    }
  }
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [s](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        double gsum = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) gsum += g[base + j * s.inner];
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          gx[idx] += g[idx] - std::exp(y[idx]) * gsum;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = x.dim(-1);
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  const auto in = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * rstd[r];
      xhat[r * n + j] = h;
      out[r * n + j] = h * g[j] + b[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        Node& nb = *self.inputs[2];
        const auto& gy = self.grad;
        if (ng.requires_grad) {
          auto& gg = ng.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) gg[j] += gy[r * n + j] * xhat[r * n + j];
          }
        }
        if (nb.requires_grad) {
          auto& gb = nb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) gb[j] += gy[r * n + j];
          }
        }
        if (nx.requires_grad) {
          auto& gx = nx.ensure_grad();
          const auto& gain_v = ng.value;
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gy[r * n + j] * gain_v[j];
              mean_d += d;
              mean_dx += d * xhat[r * n + j];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gy[r * n + j] * gain_v[j];
              gx[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
            }
          }
        }
      });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("sum", {1}, {s}, {x}, [](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    const double g = self.grad[0];
    for (double& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != ax) out_shape.push_back(x.shape()[i]);
  }
  if (out_shape.empty()) out_shape = {1};
  const double inv = 1.0 / static_cast<double>(s.len);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.len; ++j) {
      const double* src = in.data() + (o * s.len + j) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  for (double& v : out) v *= inv;
  return make_result("mean_axis", std::move(out_shape), std::move(out), {x}, [s, inv](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.len; ++j) {
        double* dst = gx.data() + (o * s.len + j) * s.inner;
        const double* src = self.grad.data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += inv * src[i];
      }
    }
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  const std::size_t ax = norm_axis(axis, first.size());
  std::vector<std::size_t> lens;
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const Tensor& t : parts) {
    bool ok = t.rank() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i) ok = i == ax || t.shape()[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(t.shape()) + " does not match " +
                           shape_str(first) + " off axis " + std::to_string(ax));
    }
    lens.push_back(t.shape()[ax]);
    out_shape[ax] += t.shape()[ax];
  }
  const AxisSplit s = split_axis(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t chunk = lens[p] * s.inner;
    const auto in = parts[p].data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(in.data() + o * chunk, chunk, out.data() + o * s.len * s.inner + offset);
    }
    offset += chunk;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result("concat", std::move(out_shape), std::move(out), std::move(inputs),
                     [s, lens = std::move(lens)](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < self.inputs.size(); ++p) {
                         const std::size_t chunk = lens[p] * s.inner;
                         Node& np = *self.inputs[p];
                         if (np.requires_grad) {
                           auto& g = np.ensure_grad();
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             const double* src = self.grad.data() + o * s.len * s.inner + offset;
                             for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
                           }
                         }
                         offset += chunk;
                       }
                     });
}

Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t n = x.dim(0);
  const std::size_t width = x.numel() / n;
  if (rows.empty()) throw DimensionError("take_rows with no rows");
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * width);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      throw DimensionError("take_rows: row " + std::to_string(rows[r]) + " out of range for " +
                           shape_str(x.shape()));
    }
    std::copy_n(in.data() + rows[r] * width, width, out.data() + r * width);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result("take_rows", std::move(out_shape), std::move(out), {x},
                     [idx = std::move(idx), width](Node& self) {
                       auto& gx = self.inputs[0]->ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         for (std::size_t j = 0; j < width; ++j) {
                           gx[idx[r] * width + j] += self.grad[r * width + j];
                         }
                       }
                     });
}

Tensor select_last(const Tensor& x, std::size_t index) {
  const std::size_t last = x.dim(-1);
  if (index >= last) throw DimensionError("select_last: index out of range for " + shape_str(x.shape()));
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  const std::size_t rows = x.numel() / last;
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = x.data()[r * last + index];
  return make_result("select_last", std::move(out_shape), std::move(out), {x},
                     [last, index](Node& self) {
                       auto& gx = self.inputs[0]->ensure_grad();
                       for (std::size_t r = 0; r < self.grad.size(); ++r) {
                         gx[r * last + index] += self.grad[r];
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& ids_shape) {
  if (table.rank() != 2) throw DimensionError("embedding table must be 2-D, got " + shape_str(table.shape()));
  if (shape_numel(ids_shape) != ids.size()) throw DimensionError("embedding: ids do not match ids_shape");
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  const auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw DataError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                      std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  std::vector<int> id_copy(ids.begin(), ids.end());
  return make_result("embedding", std::move(out_shape), std::move(out), {table},
                     [id_copy = std::move(id_copy), d](Node& self) {
                       auto& gt = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < id_copy.size(); ++i) {
                         double* dst = gt.data() + static_cast<std::size_t>(id_copy[i]) * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[i * d + j];
                       }
                     });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy_rows needs [N, C] logits, got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (targets.size() != rows) throw DimensionError("cross_entropy_rows: target count differs from rows");
  std::vector<double> probs(logits.numel());
  std::vector<double> out(rows);
  const auto in = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= classes) {
      throw ContractError("cross_entropy_rows: target " + std::to_string(targets[r]) +
                          " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = in.data() + r * classes;
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[r * classes + c] = std::exp(row[c] - mx);
      z += probs[r * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] /= z;
    out[r] = mx + std::log(z) - row[targets[r]];
  }
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result("cross_entropy_rows", {rows}, std::move(out), {logits},
                     [probs = std::move(probs), tg = std::move(tg), classes](Node& self) {
                       auto& gx = self.inputs[0]->ensure_grad();
                       for (std::size_t r = 0; r < tg.size(); ++r) {
                         const double g = self.grad[r];
                         for (std::size_t c = 0; c < classes; ++c) {
                           gx[r * classes + c] += g * probs[r * classes + c];
                         }
                         gx[r * classes + static_cast<std::size_t>(tg[r])] -= g;
                       }
                     });
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                         shape_str(x.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x.data()[i];
  std::vector<double> w(weights.begin(), weights.end());
  return make_result("weighted_sum", {1}, {s}, {x}, [w = std::move(w)](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g * w[i];
  });
}

}  // namespace qeot
