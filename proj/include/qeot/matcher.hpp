#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qeot/types.hpp"

namespace qeot::matcher {

// rows = gold triples, cols = predictions (queries).
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  CostMatrix(std::size_t r, std::size_t c, std::vector<double> v);

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

inline constexpr int kUnassigned = -1;

struct Assignment {
  // column_of_row[i] is the column matched to row i, or kUnassigned when
  // there are more rows than columns.
  std::vector<int> column_of_row;

  // Sum of the matched entries in row order.
  double total_cost(const CostMatrix& cost) const;
  bool operator==(const Assignment&) const = default;
};

// Minimum-cost assignment (Hungarian / Kuhn-Munkres with potentials,
// O(n^2 m)). With rows <= cols every row is matched; otherwise every column
// is. Among optimal assignments the lexicographically smallest column
// sequence (in row order) is returned. Throws ContractError on non-finite
// entries.
Assignment hungarian(const CostMatrix& cost);

// Exhaustive search over all injections, for tests. Requires
// rows <= cols <= 8; ties resolve to the lexicographically first injection.
Assignment brute_force_assignment(const CostMatrix& cost);

struct MatchWeights {
  double giou = 3.5;
  double l1 = 3.0;
};

// Entry (i, j) = -p_start_j(s_i) * p_end_j(t_i) - p_rel_j(r_i)
//                + w.giou * (1 - giou(b_i, b_j)) + w.l1 * |b_i - b_j|_1,
// with relation probabilities softmaxed from the logits. Plain arithmetic on
// values, nothing here touches the autodiff graph. Throws CapacityError when
// there are more gold triples than queries unless allow_overflow is set.
CostMatrix match_cost(const ModelOutput& output, std::span<const Triple> gold,
                      const MatchWeights& weights, bool allow_overflow = false);

}  // namespace qeot::matcher
