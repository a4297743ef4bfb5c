#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "qeot/tensor.hpp"

namespace qeot {

struct GradProbe {
  std::string name;
  Tensor tensor;  // a leaf with requires_grad
};

struct GradCheckOptions {
  double step = 1e-5;
  // Fraction of entries probed per tensor (at least one entry each).
  double fraction = 1.0;
  std::uint64_t seed = 0;
  // Denominator floor for the relative error, so entries whose true gradient
  // is ~0 are judged on absolute error instead.
  double floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Compares the analytic gradient of forward() (a scalar) with central
// differences (f(x+h) - f(x-h)) / 2h on the probed entries.
GradCheckReport grad_check(const std::function<Tensor()>& forward, std::span<GradProbe> probes,
                           const GradCheckOptions& options = {});

}  // namespace qeot
