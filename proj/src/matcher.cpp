#include "qeot/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qeot/errors.hpp"

namespace qeot {

std::vector<double> ModelOutput::rel_probs() const {
  const std::size_t c = classes();
  std::vector<double> out(rel_logits.size());
  for (std::size_t q = 0; q < queries; ++q) {
    const double* row = rel_logits.data() + q * c;
    double mx = row[0];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      out[q * c + k] = std::exp(row[k] - mx);
      z += out[q * c + k];
    }
    for (std::size_t k = 0; k < c; ++k) out[q * c + k] /= z;
  }
  return out;
}

namespace matcher {

CostMatrix::CostMatrix(std::size_t r, std::size_t c, std::vector<double> v)
    : rows(r), cols(c), values(std::move(v)) {
  if (values.size() != r * c) throw DimensionError("cost matrix values do not match its shape");
}

double Assignment::total_cost(const CostMatrix& cost) const {
  double total = 0.0;
  for (std::size_t i = 0; i < column_of_row.size(); ++i) {
    if (column_of_row[i] != kUnassigned) total += cost.at(i, static_cast<std::size_t>(column_of_row[i]));
  }
  return total;
}

namespace {

// Shortest-augmenting-path Hungarian with row/column potentials on the
// sub-matrix rows x cols of `cost` (rows.size() <= cols.size()). Returns, for
// each listed row, the index into `cols` it is matched to.
std::vector<std::size_t> solve_core(const CostMatrix& cost, std::span<const std::size_t> rows,
                                    std::span<const std::size_t> cols) {
  const std::size_t n = rows.size();
  const std::size_t m = cols.size();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost.at(rows[i0 - 1], cols[j - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
  }
  return col_of_row;
}

double core_value(const CostMatrix& cost, std::span<const std::size_t> rows,
                  std::span<const std::size_t> cols) {
  if (rows.empty()) return 0.0;
  const auto match = solve_core(cost, rows, cols);
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) total += cost.at(rows[i], cols[match[i]]);
  return total;
}

// rows <= cols. Fixes rows one at a time to the smallest column that still
// admits an optimal completion.
std::vector<int> lexicographic_optimum(const CostMatrix& cost) {
  const std::size_t n = cost.rows;
  const std::size_t m = cost.cols;
  std::vector<std::size_t> all_rows(n), all_cols(m);
  for (std::size_t i = 0; i < n; ++i) all_rows[i] = i;
  for (std::size_t j = 0; j < m; ++j) all_cols[j] = j;
  const double best = core_value(cost, all_rows, all_cols);
  const double tol = 1e-11 * (1.0 + std::abs(best));

  std::vector<int> out(n, kUnassigned);
  std::vector<char> taken(m, 0);
  double prefix = 0.0;
  std::vector<std::size_t> rest_cols;
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const std::size_t> rest_rows(all_rows.data() + i + 1, n - i - 1);
    std::size_t pick = m;
    double pick_total = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if (taken[j]) continue;
      rest_cols.clear();
      for (std::size_t k = 0; k < m; ++k) {
        if (!taken[k] && k != j) rest_cols.push_back(k);
      }
      const double total = prefix + cost.at(i, j) + core_value(cost, rest_rows, rest_cols);
      if (total <= best + tol) {
        pick = j;
        pick_total = total;
        break;
      }
      if (total < pick_total) {
        pick = j;
        pick_total = total;
      }
    }
    out[i] = static_cast<int>(pick);
    taken[pick] = 1;
    prefix += cost.at(i, pick);
  }
  return out;
}

void check_finite(const CostMatrix& cost) {
  if (cost.values.size() != cost.rows * cost.cols) throw ContractError("cost matrix has the wrong size");
  for (std::size_t i = 0; i < cost.values.size(); ++i) {
    if (!std::isfinite(cost.values[i])) {
      throw ContractError("cost matrix entry (" + std::to_string(i / cost.cols) + ", " +
                          std::to_string(i % cost.cols) + ") is not finite");
    }
  }
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  check_finite(cost);
  Assignment a;
  if (cost.rows == 0) return a;
  if (cost.cols == 0) {
    a.column_of_row.assign(cost.rows, kUnassigned);
    return a;
  }
  if (cost.rows <= cost.cols) {
    a.column_of_row = lexicographic_optimum(cost);
    return a;
  }
  CostMatrix t(cost.cols, cost.rows);
  for (std::size_t i = 0; i < cost.rows; ++i) {
    for (std::size_t j = 0; j < cost.cols; ++j) t.at(j, i) = cost.at(i, j);
  }
  const std::vector<int> row_of_col = lexicographic_optimum(t);
  a.column_of_row.assign(cost.rows, kUnassigned);
  for (std::size_t j = 0; j < row_of_col.size(); ++j) {
    a.column_of_row[static_cast<std::size_t>(row_of_col[j])] = static_cast<int>(j);
  }
  return a;
}

Assignment brute_force_assignment(const CostMatrix& cost) {
  check_finite(cost);
  if (cost.cols > 8) throw ContractError("brute_force_assignment is limited to 8 columns");
  if (cost.rows > cost.cols) throw ContractError("brute_force_assignment needs rows <= cols");
  const std::size_t n = cost.rows;
  std::vector<int> current(n, kUnassigned);
  std::vector<int> best_assign;
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> taken(cost.cols, 0);
  // Depth-first over columns in ascending order: injections are visited in
  // lexicographic order, and only a strictly smaller total replaces the best.
  auto recurse = [&](auto&& self, std::size_t row) -> void {
    if (row == n) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += cost.at(i, static_cast<std::size_t>(current[i]));
      if (total < best) {
        best = total;
        best_assign = current;
      }
      return;
    }
    for (std::size_t j = 0; j < cost.cols; ++j) {
      if (taken[j]) continue;
      taken[j] = 1;
      current[row] = static_cast<int>(j);
      self(self, row + 1);
      taken[j] = 0;
    }
  };
  recurse(recurse, 0);
  return Assignment{best_assign};
}

CostMatrix match_cost(const ModelOutput& output, std::span<const Triple> gold,
                      const MatchWeights& weights, bool allow_overflow) {
  const std::size_t q = output.queries;
  if (gold.size() > q && !allow_overflow) {
    throw CapacityError(std::to_string(gold.size()) + " gold triples exceed " + std::to_string(q) +
                        " queries; increase the query count");
  }
  const std::vector<double> rel = output.rel_probs();
  const std::size_t classes = output.classes();
  CostMatrix cost(gold.size(), q);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const Triple& t = gold[i];
    if (t.relation < 0 || static_cast<std::size_t>(t.relation) >= output.relations) {
      throw DataError("gold relation " + std::to_string(t.relation) + " is not a real relation id");
    }
    if (t.entity.start < 0 || t.entity.end < t.entity.start ||
        static_cast<std::size_t>(t.entity.end) >= output.seq_len) {
      throw DataError("gold span outside the sentence");
    }
    const auto gold_xyxy = geometry::to_xyxy(t.box);
    for (std::size_t j = 0; j < q; ++j) {
      const double p_ent = output.start_prob(j, static_cast<std::size_t>(t.entity.start)) *
                           output.end_prob(j, static_cast<std::size_t>(t.entity.end));
      const double p_rel = rel[j * classes + static_cast<std::size_t>(t.relation)];
      const auto pred = output.box(j);
      cost.at(i, j) = -p_ent - p_rel +
                      weights.giou * (1.0 - geometry::giou(gold_xyxy, geometry::to_xyxy(pred))) +
                      weights.l1 * geometry::l1_box(pred, t.box);
    }
  }
  return cost;
}

}  // namespace matcher
}  // namespace qeot
