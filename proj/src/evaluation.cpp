#include "qeot/evaluation.hpp"

#include <algorithm>
#include <map>
#include <thread>
#include <tuple>

#include "json.hpp"
#include "qeot/geometry.hpp"
#include "qeot/loss.hpp"
#include "qeot/matcher.hpp"

namespace qeot {

Counts& Counts::operator+=(const Counts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

double Counts::f1() const {
  const double p = precision();
  const double r = recall();
  return 2.0 * p * r / (p + r);
}

namespace {

std::size_t argmax(const double* v, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

using Key = std::tuple<int, int, int>;  // start, end, relation

Key key_of(const Triple& t) { return {t.entity.start, t.entity.end, t.relation}; }

std::map<Key, std::vector<geometry::BoxCxCyWh>> group(std::span<const Triple> triples) {
  std::map<Key, std::vector<geometry::BoxCxCyWh>> out;
  for (const Triple& t : triples) out[key_of(t)].push_back(t.box);
  auto less = [](const geometry::BoxCxCyWh& a, const geometry::BoxCxCyWh& b) {
    return std::tie(a.cx, a.cy, a.w, a.h) < std::tie(b.cx, b.cy, b.w, b.h);
  };
  for (auto& [k, boxes] : out) std::sort(boxes.begin(), boxes.end(), less);
  return out;
}

template <typename T>
std::size_t multiset_overlap(std::vector<T> a, std::vector<T> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t n = 0;
  for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

}  // namespace

std::vector<Triple> decode(const ModelOutput& output) {
  std::vector<Triple> out;
  const std::size_t classes = output.classes();
  for (std::size_t q = 0; q < output.queries; ++q) {
    const std::size_t rel = argmax(output.rel_logits.data() + q * classes, classes);
    if (rel == output.empty_class()) continue;
    const auto start = static_cast<int>(argmax(output.start_dist.data() + q * output.seq_len, output.seq_len));
    const auto end = static_cast<int>(argmax(output.end_dist.data() + q * output.seq_len, output.seq_len));
    out.push_back({{start, std::max(start, end)}, static_cast<int>(rel), output.box(q)});
  }
  return out;
}

RawCounts triple_counts(std::span<const Triple> pred, std::span<const Triple> gold, double theta) {
  RawCounts c;
  const auto gold_map = group(gold);
  const auto pred_map = group(pred);
  for (const auto& [key, gold_boxes] : gold_map) {
    const auto it = pred_map.find(key);
    if (it == pred_map.end()) {
      c.fn += gold_boxes.size();
      continue;
    }
    const auto& pred_boxes = it->second;
    matcher::CostMatrix cost(gold_boxes.size(), pred_boxes.size());
    for (std::size_t i = 0; i < gold_boxes.size(); ++i) {
      for (std::size_t j = 0; j < pred_boxes.size(); ++j) cost.at(i, j) = geometry::l1_box(pred_boxes[j], gold_boxes[i]);
    }
    const auto assignment = matcher::hungarian(cost);
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < gold_boxes.size(); ++i) {
      const int j = assignment.column_of_row[i];
      if (j == matcher::kUnassigned) continue;
      ++pairs;
      const double iou = geometry::iou(geometry::to_xyxy(pred_boxes[static_cast<std::size_t>(j)]),
                                       geometry::to_xyxy(gold_boxes[i]));
      if (iou > theta) {
        ++c.tp;
      } else {
        ++c.fp;
        ++c.fn;
      }
    }
    c.fp += pred_boxes.size() - pairs;
    c.fn += gold_boxes.size() - pairs;
  }
  for (const auto& [key, pred_boxes] : pred_map) {
    if (!gold_map.contains(key)) c.fp += pred_boxes.size();
  }
  return c;
}

RawCounts pair_counts(std::span<const Triple> pred, std::span<const Triple> gold) {
  std::vector<Key> p, g;
  for (const Triple& t : pred) p.push_back(key_of(t));
  for (const Triple& t : gold) g.push_back(key_of(t));
  RawCounts c;
  c.tp = multiset_overlap(p, g);
  c.fp = p.size() - c.tp;
  c.fn = g.size() - c.tp;
  return c;
}

Accuracy accuracy_counts(std::span<const Triple> pred, std::span<const Triple> gold) {
  std::vector<int> pr, gr;
  std::vector<Span> ps, gs;
  for (const Triple& t : pred) {
    pr.push_back(t.relation);
    ps.push_back(t.entity);
  }
  for (const Triple& t : gold) {
    gr.push_back(t.relation);
    gs.push_back(t.entity);
  }
  return {multiset_overlap(pr, gr), multiset_overlap(ps, gs), gold.size()};
}

SampleResult MetricsAccumulator::add(const std::string& id, std::vector<Triple> predicted,
                                     std::span<const Triple> gold) {
  SampleResult r;
  r.id = id;
  r.triple = triple_counts(predicted, gold, theta_);
  r.pair = pair_counts(predicted, gold);
  r.accuracy = accuracy_counts(predicted, gold);
  r.predicted = std::move(predicted);
  for (auto [dst, src] : {std::pair{&triple_, &r.triple}, std::pair{&pair_, &r.pair}}) {
    dst->tp += src->tp;
    dst->fp += src->fp;
    dst->fn += src->fn;
  }
  acc_.rel_hits += r.accuracy.rel_hits;
  acc_.ent_hits += r.accuracy.ent_hits;
  acc_.gold += r.accuracy.gold;
  ++samples_;
  predicted_ += r.predicted.size();
  return r;
}

MetricsReport MetricsAccumulator::report() const {
  auto floored = [](const RawCounts& raw) {
    Counts c;
    c.tp += static_cast<double>(raw.tp);
    c.fp += static_cast<double>(raw.fp);
    c.fn += static_cast<double>(raw.fn);
    return c;
  };
  MetricsReport m;
  const Counts t = floored(triple_);
  const Counts p = floored(pair_);
  m.triple_p = t.precision();
  m.triple_r = t.recall();
  m.triple_f1 = t.f1();
  m.pair_p = p.precision();
  m.pair_r = p.recall();
  m.pair_f1 = p.f1();
  const double gold = static_cast<double>(std::max<std::size_t>(acc_.gold, 1));
  m.rel_acc = static_cast<double>(acc_.rel_hits) / gold;
  m.ent_acc = static_cast<double>(acc_.ent_hits) / gold;
  m.triple = triple_;
  m.pair = pair_;
  m.samples = samples_;
  m.gold_triples = acc_.gold;
  m.predicted_triples = predicted_;
  return m;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["triple_p"] = triple_p;
  j["triple_r"] = triple_r;
  j["triple_f1"] = triple_f1;
  j["pair_p"] = pair_p;
  j["pair_r"] = pair_r;
  j["pair_f1"] = pair_f1;
  j["rel_acc"] = rel_acc;
  j["ent_acc"] = ent_acc;
  j["triple_counts"] = {{"tp", triple.tp}, {"fp", triple.fp}, {"fn", triple.fn}};
  j["pair_counts"] = {{"tp", pair.tp}, {"fp", pair.fp}, {"fn", pair.fn}};
  j["samples"] = samples;
  j["gold_triples"] = gold_triples;
  j["predicted_triples"] = predicted_triples;
  return j.dump();
}

std::string sample_result_json(const SampleResult& r) {
  nlohmann::json pred = nlohmann::json::array();
  for (const Triple& t : r.predicted) {
    pred.push_back({{"start", t.entity.start},
                    {"end", t.entity.end},
                    {"rel", t.relation},
                    {"box", {t.box.cx, t.box.cy, t.box.w, t.box.h}}});
  }
  nlohmann::json j;
  j["id"] = r.id;
  j["predicted"] = std::move(pred);
  j["triple_counts"] = {{"tp", r.triple.tp}, {"fp", r.triple.fp}, {"fn", r.triple.fn}};
  j["pair_counts"] = {{"tp", r.pair.tp}, {"fp", r.pair.fp}, {"fn", r.pair.fn}};
  j["rel_hits"] = r.accuracy.rel_hits;
  j["ent_hits"] = r.accuracy.ent_hits;
  j["gold"] = r.accuracy.gold;
  return j.dump();
}

MetricsReport evaluate_dataset(const Model& model, std::span<const Sample> samples, const EvalOptions& options,
                               std::vector<SampleResult>* per_sample) {
  const std::size_t batch = std::max<std::size_t>(options.batch, 1);
  const std::size_t batches = (samples.size() + batch - 1) / batch;
  std::vector<std::vector<Triple>> decoded(samples.size());

  auto run = [&](std::size_t worker, std::size_t stride) {
    NoGradGuard guard;
    for (std::size_t bi = worker; bi < batches; bi += stride) {
      const std::size_t lo = bi * batch;
      const std::size_t hi = std::min(samples.size(), lo + batch);
      std::vector<const Sample*> ptrs;
      for (std::size_t i = lo; i < hi; ++i) {
        check_sample_shape(samples[i], model.config().seq_len, model.config().grid, model.config().img_channels);
        ptrs.push_back(&samples[i]);
      }
      const BatchOutput out = model.forward(make_batch(ptrs));
      for (std::size_t i = lo; i < hi; ++i) decoded[i] = decode(out.sample(i - lo));
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, std::max<std::size_t>(batches, 1));
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          run(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  MetricsAccumulator acc(options.theta);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    SampleResult r = acc.add(samples[i].id, std::move(decoded[i]), samples[i].gold);
    if (per_sample != nullptr) per_sample->push_back(std::move(r));
  }
  return acc.report();
}

}  // namespace qeot
