#pragma once

// Differentiable primitives. Binary elementwise ops broadcast with NumPy
// rules; matmul broadcasts leading (batch) dimensions. Shape errors throw
// DimensionError naming both operand shapes.

#include <cstddef>
#include <span>
#include <vector>

#include "qeot/tensor.hpp"

namespace qeot {

// [..., m, k] @ [..., k, n] -> [..., m, n]
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor reshape(const Tensor& x, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);

// Subgradient at 0 is 0.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

// Max-subtracted; slices along axis sum to one.
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);

// Normalizes over the last axis, then applies gain and bias (both [last]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over one axis, which is removed from the shape.
Tensor mean_axis(const Tensor& x, int axis);
Tensor concat(std::span<const Tensor> parts, int axis);

// x viewed as [N, rest...]; returns the listed rows as [len(rows), rest...].
Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows);
// Drops the last axis by picking one index along it.
Tensor select_last(const Tensor& x, std::size_t index);

// table [V, d], ids of shape ids_shape -> ids_shape + [d].
Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& ids_shape);

// logits [N, C] -> per-row -log softmax(logits)[target], shape [N].
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets);

// sum_i w[i] * x[i] over a flat view of x; returns shape [1].
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace qeot
