#include "qeot/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "qeot/rng.hpp"

namespace qeot {

GradCheckReport grad_check(const std::function<Tensor()>& forward, std::span<GradProbe> probes,
                           const GradCheckOptions& options) {
  for (auto& p : probes) p.tensor.zero_grad();
  {
    const Tensor root = forward();
    backward(root);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : probes) {
    const auto g = p.tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.tensor.numel(), 0.0);
  }

  auto eval = [&] {
    NoGradGuard guard;
    return forward().item();
  };

  GradCheckReport report;
  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < probes.size(); ++pi) {
    auto values = probes[pi].tensor.mutable_data();
    std::vector<std::size_t> picks;
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (options.fraction >= 1.0 || rng.uniform() < options.fraction) picks.push_back(j);
    }
    if (picks.empty()) picks.push_back(rng.below(values.size()));
    for (std::size_t j : picks) {
      const double saved = values[j];
      values[j] = saved + options.step;
      const double up = eval();
      values[j] = saved - options.step;
      const double down = eval();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[pi][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_name.empty()) {
        report.max_rel_error = std::max(rel, report.max_rel_error);
        if (rel >= report.max_rel_error) {
          report.worst_name = probes[pi].name;
          report.worst_index = j;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace qeot
