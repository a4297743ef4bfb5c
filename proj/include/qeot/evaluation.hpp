#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qeot/data.hpp"
#include "qeot/model.hpp"
#include "qeot/types.hpp"

namespace qeot {

// Counters start at this value so precision and recall never divide by zero.
inline constexpr double kCountFloor = 1e-9;

struct Counts {
  double tp = kCountFloor;
  double fp = kCountFloor;
  double fn = kCountFloor;

  Counts& operator+=(const Counts& o);
  double precision() const { return tp / (tp + fp); }
  double recall() const { return tp / (tp + fn); }
  double f1() const;
};

// Integer counts before the floor; Counts adds them to the floors.
struct RawCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  bool operator==(const RawCounts&) const = default;
};

// Per query: relation = argmax of the R + 1 logits (queries that pick the
// no-relation class are dropped), span = (argmax start, argmax end) with the
// end clamped to >= start, box passed through. Ties pick the lowest index.
std::vector<Triple> decode(const ModelOutput& output);

// Triple-level scoring. Boxes are grouped by exact (span, relation) key.
// Under a shared key, gold and predicted boxes are Hungarian-matched on L1
// cost; a matched pair with IoU > theta is a tp, otherwise it counts once as
// fp and once as fn. Unmatched boxes under a shared key, and keys present on
// only one side, add their box counts to fp (prediction side) or fn (gold
// side).
RawCounts triple_counts(std::span<const Triple> pred, std::span<const Triple> gold, double theta = 0.5);

// Multiset match on (span, relation), boxes ignored.
RawCounts pair_counts(std::span<const Triple> pred, std::span<const Triple> gold);

struct Accuracy {
  std::size_t rel_hits = 0;
  std::size_t ent_hits = 0;
  std::size_t gold = 0;
};

// rel_hits = multiset intersection of gold and predicted relation ids;
// ent_hits = the same over entity spans. Independent of each other.
Accuracy accuracy_counts(std::span<const Triple> pred, std::span<const Triple> gold);

struct MetricsReport {
  double triple_p = 0.0, triple_r = 0.0, triple_f1 = 0.0;
  double pair_p = 0.0, pair_r = 0.0, pair_f1 = 0.0;
  double rel_acc = 0.0;
  double ent_acc = 0.0;
  RawCounts triple;
  RawCounts pair;
  std::size_t samples = 0;
  std::size_t gold_triples = 0;
  std::size_t predicted_triples = 0;

  std::string to_json() const;
};

struct SampleResult {
  std::string id;
  std::vector<Triple> predicted;
  RawCounts triple;
  RawCounts pair;
  Accuracy accuracy;
};

// Accumulates micro-averaged counts over samples, in sample order.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(double theta = 0.5) : theta_(theta) {}
  SampleResult add(const std::string& id, std::vector<Triple> predicted, std::span<const Triple> gold);
  MetricsReport report() const;

 private:
  double theta_;
  RawCounts triple_, pair_;
  Accuracy acc_;
  std::size_t samples_ = 0;
  std::size_t predicted_ = 0;
};

struct EvalOptions {
  double theta = 0.5;
  std::size_t batch = 32;
  // Worker threads over batches; results are identical for any value.
  std::size_t workers = 1;
};

// Runs the model without gradients over the samples, decodes and scores.
// per_sample, when given, receives one entry per sample in input order.
MetricsReport evaluate_dataset(const Model& model, std::span<const Sample> samples, const EvalOptions& options,
                               std::vector<SampleResult>* per_sample = nullptr);

std::string sample_result_json(const SampleResult& r);

}  // namespace qeot
