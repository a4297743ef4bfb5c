#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "qeot/rng.hpp"
#include "qeot/tensor.hpp"

namespace qeot::testing {

inline std::vector<double> uniform_values(std::size_t n, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = true, double lo = -2.0,
                            double hi = 2.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor::from(std::move(shape), uniform_values(n, seed, lo, hi), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace qeot::testing
