#include "qeot/loss.hpp"

#include <cmath>
#include <string>

#include "qeot/errors.hpp"
#include "qeot/geometry.hpp"
#include "qeot/ops.hpp"

namespace qeot {

void LossWeights::validate() const {
  for (double w : {ent, rel, l1, giou}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

namespace {

std::vector<double> values_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<double> softmax_rows(const Tensor& logits) {
  NoGradGuard guard;
  return values_of(softmax(logits));
}

}  // namespace

SampleLoss joint_loss(const Tensor& start_logits, const Tensor& end_logits, const Tensor& rel_logits,
                      const Tensor& boxes, std::span<const Triple> gold, const LossOptions& options) {
  const std::size_t q = boxes.dim(0);
  const std::size_t classes = rel_logits.dim(1);
  if (gold.size() > q && !options.allow_overflow) {
    throw CapacityError(std::to_string(gold.size()) + " gold triples exceed " + std::to_string(q) +
                        " queries; increase the query count");
  }

  ModelOutput values;
  values.queries = q;
  values.seq_len = start_logits.dim(1);
  values.relations = classes - 1;
  values.start_dist = softmax_rows(start_logits);
  values.end_dist = softmax_rows(end_logits);
  values.rel_logits = values_of(rel_logits);
  values.boxes = values_of(boxes);
  const matcher::CostMatrix cost =
      matcher::match_cost(values, gold, {options.weights.giou, options.weights.l1}, options.allow_overflow);

  SampleLoss out;
  out.breakdown.assignment = matcher::hungarian(cost);

  // gold_of_query[j] = matched gold index or -1.
  std::vector<int> gold_of_query(q, -1);
  const auto& cols = out.breakdown.assignment.column_of_row;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] != matcher::kUnassigned) gold_of_query[static_cast<std::size_t>(cols[i])] = static_cast<int>(i);
  }

  std::vector<int> rel_targets(q, static_cast<int>(values.empty_class()));
  std::vector<double> rel_w(q, options.empty_weight);
  std::vector<std::size_t> matched;
  std::vector<int> starts, ends;
  std::vector<geometry::BoxCxCyWh> gold_boxes;
  for (std::size_t j = 0; j < q; ++j) {
    if (gold_of_query[j] < 0) continue;
    const Triple& t = gold[static_cast<std::size_t>(gold_of_query[j])];
    rel_targets[j] = t.relation;
    rel_w[j] = 1.0;
    matched.push_back(j);
    starts.push_back(t.entity.start);
    ends.push_back(t.entity.end);
    gold_boxes.push_back(t.box);
  }
  double w_sum = 0.0;
  for (double w : rel_w) w_sum += w;
  for (double& w : rel_w) w = w_sum > 0.0 ? w / w_sum : 0.0;

  const Tensor rel = weighted_sum(cross_entropy_rows(rel_logits, rel_targets), rel_w);
  Tensor ent = Tensor::zeros({1});
  Tensor l1 = Tensor::zeros({1});
  Tensor giou = Tensor::zeros({1});
  if (!matched.empty()) {
    const std::vector<double> avg(matched.size(), 1.0 / static_cast<double>(matched.size()));
    ent = weighted_sum(cross_entropy_rows(take_rows(start_logits, matched), starts) +
                           cross_entropy_rows(take_rows(end_logits, matched), ends),
                       avg);
    const Tensor picked = take_rows(boxes, matched);
    l1 = weighted_sum(geometry::l1_rows(picked, gold_boxes), avg);
    giou = weighted_sum(geometry::giou_loss_rows(picked, gold_boxes), avg);
  }
  const LossWeights& w = options.weights;
  out.total = ent * w.ent + rel * w.rel + l1 * w.l1 + giou * w.giou;
  out.breakdown.ent = ent.item();
  out.breakdown.rel = rel.item();
  out.breakdown.l1 = l1.item();
  out.breakdown.giou = giou.item();
  out.breakdown.total = out.total.item();
  return out;
}

SampleLoss joint_loss(const BatchOutput& output, std::size_t b, std::span<const Triple> gold,
                      const LossOptions& options) {
  const std::size_t row[1] = {b};
  auto pick = [&](const Tensor& t) {
    Shape rest(t.shape().begin() + 1, t.shape().end());
    return reshape(take_rows(t, row), rest);
  };
  return joint_loss(pick(output.start_logits), pick(output.end_logits), pick(output.rel_logits),
                    pick(output.boxes), gold, options);
}

LossBreakdown joint_loss(const ModelOutput& output, std::span<const Triple> gold, const LossOptions& options) {
  NoGradGuard guard;
  auto logs = [](const std::vector<double>& p) {
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::log(p[i]);
    return out;
  };
  const Shape qd = {output.queries, output.seq_len};
  return joint_loss(Tensor::from(qd, logs(output.start_dist)), Tensor::from(qd, logs(output.end_dist)),
                    Tensor::from({output.queries, output.classes()}, output.rel_logits),
                    Tensor::from({output.queries, 4}, output.boxes), gold, options)
      .breakdown;
}

BatchInput make_batch(std::span<const Sample* const> samples) {
  BatchInput in;
  in.batch = samples.size();
  for (const Sample* s : samples) {
    in.tokens.insert(in.tokens.end(), s->tokens.begin(), s->tokens.end());
    in.grids.insert(in.grids.end(), s->pixels.begin(), s->pixels.end());
  }
  return in;
}

StepResult train_step(Model& model, AdamW& optimizer, std::span<const Sample* const> batch,
                      const LossOptions& options) {
  StepResult result;
  for (const Sample* s : batch) {
    for (double v : s->pixels) {
      if (!std::isfinite(v)) throw NumericError("non-finite pixel in sample '" + s->id + "'");
    }
  }
  model.store().zero_grad();
  const BatchOutput out = model.forward(make_batch(batch));
  Tensor total;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    SampleLoss loss = joint_loss(out, b, batch[b]->gold, options);
    if (!std::isfinite(loss.breakdown.total)) {
      throw NumericError("non-finite loss on sample '" + batch[b]->id + "'");
    }
    total = total.defined() ? total + loss.total : loss.total;
    result.samples.push_back(std::move(loss.breakdown));
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  backward(total * inv);
  optimizer.step(model.store());
  for (const LossBreakdown& s : result.samples) {
    result.total += s.total * inv;
    result.ent += s.ent * inv;
    result.rel += s.rel * inv;
    result.l1 += s.l1 * inv;
    result.giou += s.giou * inv;
  }
  return result;
}

}  // namespace qeot
