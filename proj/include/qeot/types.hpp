#pragma once

#include <compare>
#include <cstddef>
#include <vector>

#include "qeot/geometry.hpp"

namespace qeot {

// Inclusive token range [start, end].
struct Span {
  int start = 0;
  int end = 0;

  auto operator<=>(const Span&) const = default;
};

// One (entity span, relation, object box) fact. Gold triples always carry a
// real relation id in [0, R); the no-relation class never leaves decode().
struct Triple {
  Span entity;
  int relation = 0;
  geometry::BoxCxCyWh box;

  bool operator==(const Triple&) const = default;
};

// Per-sample prediction for Q queries over a length-L sentence and R
// relations. Row-major: start_dist/end_dist are Q x L, rel_logits is
// Q x (R + 1) with column R the no-relation class, boxes is Q x 4 (cxcywh).
struct ModelOutput {
  std::size_t queries = 0;
  std::size_t seq_len = 0;
  std::size_t relations = 0;
  std::vector<double> start_dist;
  std::vector<double> end_dist;
  std::vector<double> rel_logits;
  std::vector<double> boxes;

  std::size_t classes() const { return relations + 1; }
  std::size_t empty_class() const { return relations; }
  double start_prob(std::size_t q, std::size_t pos) const { return start_dist[q * seq_len + pos]; }
  double end_prob(std::size_t q, std::size_t pos) const { return end_dist[q * seq_len + pos]; }
  double rel_logit(std::size_t q, std::size_t r) const { return rel_logits[q * classes() + r]; }
  geometry::BoxCxCyWh box(std::size_t q) const {
    return {boxes[q * 4], boxes[q * 4 + 1], boxes[q * 4 + 2], boxes[q * 4 + 3]};
  }
  // Softmax of rel_logits, Q x (R + 1).
  std::vector<double> rel_probs() const;
};

}  // namespace qeot
