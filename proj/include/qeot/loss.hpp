#pragma once

#include <span>
#include <string>
#include <vector>

#include "qeot/data.hpp"
#include "qeot/matcher.hpp"
#include "qeot/model.hpp"
#include "qeot/optim.hpp"
#include "qeot/types.hpp"

namespace qeot {

struct LossWeights {
  double ent = 1.0;
  double rel = 2.0;
  double l1 = 3.0;
  double giou = 3.5;

  // Throws ConfigError on a negative or non-finite weight.
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossOptions {
  LossWeights weights;
  // Relative weight of queries whose target is the no-relation class in the
  // relation cross-entropy (1 = plain mean over queries).
  double empty_weight = 1.0;
  // Match only Q of the gold triples when there are more than Q, instead of
  // throwing CapacityError. The unmatched triples contribute nothing.
  bool allow_overflow = false;
};

struct LossBreakdown {
  double total = 0.0;
  double ent = 0.0;
  double rel = 0.0;
  double l1 = 0.0;
  double giou = 0.0;
  matcher::Assignment assignment;
};

struct SampleLoss {
  Tensor total;  // [1], differentiable
  LossBreakdown breakdown;
};

// Per-sample loss on differentiable head outputs: start/end logits [Q, L],
// relation logits [Q, R + 1], boxes [Q, 4].
//   1. Hungarian assignment on the match cost (no gradient).
//   2. rel: cross-entropy over all Q queries; matched queries target their
//      gold relation, the rest the no-relation class.
//   3. ent: start + end cross-entropy, averaged over matched queries.
//   4. l1, giou: box losses averaged over matched queries.
// Matched terms are summed in query order, so the result does not depend on
// the order of `gold`.
SampleLoss joint_loss(const Tensor& start_logits, const Tensor& end_logits, const Tensor& rel_logits,
                      const Tensor& boxes, std::span<const Triple> gold, const LossOptions& options);

// Sample b of a batched forward pass.
SampleLoss joint_loss(const BatchOutput& output, std::size_t b, std::span<const Triple> gold,
                      const LossOptions& options);

// Value-only form on a plain ModelOutput (start/end distributions stand in
// for the logits through their logarithms).
LossBreakdown joint_loss(const ModelOutput& output, std::span<const Triple> gold, const LossOptions& options);

BatchInput make_batch(std::span<const Sample* const> samples);

struct StepResult {
  std::vector<LossBreakdown> samples;
  // Means over the batch.
  double total = 0.0;
  double ent = 0.0;
  double rel = 0.0;
  double l1 = 0.0;
  double giou = 0.0;
};

// Forward, mean-over-samples loss, backward and one optimizer step. A
// non-finite sample loss throws NumericError naming the sample id before any
// parameter changes.
StepResult train_step(Model& model, AdamW& optimizer, std::span<const Sample* const> batch,
                      const LossOptions& options);

}  // namespace qeot
