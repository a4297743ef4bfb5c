#include <cmath>
#include <set>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "qeot/data.hpp"
#include "qeot/errors.hpp"
#include "qeot/grad_check.hpp"
#include "qeot/loss.hpp"
#include "qeot/model.hpp"
#include "qeot/ops.hpp"
#include "support.hpp"

using namespace qeot;
using qeot::testing::random_tensor;
using qeot::testing::uniform_values;

namespace {

BatchInput random_batch(const ModelConfig& c, std::size_t batch, std::uint64_t seed) {
  Rng rng(seed);
  BatchInput in;
  in.batch = batch;
  in.tokens.resize(batch * c.seq_len);
  for (int& t : in.tokens) t = static_cast<int>(rng.below(c.vocab));
  in.grids.resize(batch * c.grid * c.grid * c.img_channels);
  for (double& v : in.grids) v = rng.uniform();
  return in;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.seq_len = 5;
  c.grid = 2;
  c.hidden = 8;
  c.queries = 3;
  c.relations = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.heads = 2;
  c.vocab = 12;
  c.img_channels = 3;
  c.ffn = 8;
  return c;
}

void check_rows_sum_to_one(const Tensor& t, double tol = 1e-9) {
  const std::size_t n = t.dim(-1);
  const auto d = t.data();
  for (std::size_t r = 0; r < t.numel() / n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(d[r * n + j] >= 0.0);
      s += d[r * n + j];
    }
    CHECK(std::abs(s - 1.0) < tol);
  }
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.queries = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.relations = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_head_form("literal") == HeadForm::kLiteral);
  CHECK(std::string(head_form_name(HeadForm::kMlp)) == "mlp");
  CHECK_THROWS_AS(parse_head_form("conv"), ConfigError);
}

TEST_CASE("output contract over the config sweep") {
  for (auto [l, g, d, q, r] : {std::tuple{8u, 4u, 32u, 3u, 5u}, {16u, 4u, 64u, 5u, 21u}, {32u, 8u, 64u, 7u, 21u}}) {
    CAPTURE(l);
    CAPTURE(g);
    ModelConfig c;
    c.seq_len = l;
    c.grid = g;
    c.hidden = d;
    c.queries = q;
    c.relations = r;
    const Model model(c, 3);
    NoGradGuard guard;
    const BatchOutput out = model.forward(random_batch(c, 2, 4));
    CHECK(out.start_dist.shape() == Shape{2, q, l});
    CHECK(out.end_dist.shape() == Shape{2, q, l});
    CHECK(out.rel_logits.shape() == Shape{2, q, r + 1});
    CHECK(out.boxes.shape() == Shape{2, q, 4});
    check_rows_sum_to_one(out.start_dist);
    check_rows_sum_to_one(out.end_dist);
    for (double v : out.boxes.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    for (double v : out.rel_logits.data()) CHECK(std::isfinite(v));
    const ModelOutput s = out.sample(1);
    CHECK(s.queries == q);
    CHECK(s.classes() == r + 1);
    CHECK(s.start_dist.size() == q * l);
  }
}

TEST_CASE("output invariants hold over many random inputs") {
  const ModelConfig c = tiny_config();
  const Model model(c, 8);
  NoGradGuard guard;
  for (int t = 0; t < 1000; t += 50) {
    const BatchOutput out = model.forward(random_batch(c, 50, 100 + t));
    check_rows_sum_to_one(out.start_dist);
    check_rows_sum_to_one(out.end_dist);
    for (double v : out.boxes.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("every attention map is row-stochastic and gates are strictly inside (0,1)") {
  ModelConfig c;
  const Model model(c, 5);
  NoGradGuard guard;
  const BatchOutput out = model.forward(random_batch(c, 3, 6));
  check_rows_sum_to_one(out.fusion.text_attention);
  check_rows_sum_to_one(out.fusion.img_attention);
  check_rows_sum_to_one(out.fusion.img_to_text_cross);
  for (const auto& w : out.transformer.encoder_self) check_rows_sum_to_one(w);
  for (const auto& w : out.transformer.decoder_self) check_rows_sum_to_one(w);
  for (const auto& w : out.transformer.decoder_cross) {
    CHECK(w.shape() == Shape{3, c.heads, c.queries, c.seq_len});
    check_rows_sum_to_one(w);
  }
  CHECK(out.transformer.decoder_cross.size() == c.dec_layers);
  for (const Tensor* g : {&out.fusion.text_gate, &out.fusion.img_gate}) {
    for (double v : g->data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("forward is a pure function of its input") {
  const ModelConfig c;
  const Model m1(c, 7), m2(c, 7);
  const BatchInput in = random_batch(c, 2, 9);
  NoGradGuard guard;
  const BatchOutput a = m1.forward(in), b = m1.forward(in), other = m2.forward(in);
  CHECK(values(a.start_dist) == values(b.start_dist));
  CHECK(values(a.rel_logits) == values(b.rel_logits));
  CHECK(values(a.boxes) == values(other.boxes));
}

TEST_CASE("batching does not mix samples") {
  const ModelConfig c = tiny_config();
  const Model model(c, 2);
  const BatchInput both = random_batch(c, 2, 10);
  BatchInput second;
  second.batch = 1;
  second.tokens.assign(both.tokens.begin() + static_cast<long>(c.seq_len), both.tokens.end());
  const std::size_t per = c.grid * c.grid * c.img_channels;
  second.grids.assign(both.grids.begin() + static_cast<long>(per), both.grids.end());
  NoGradGuard guard;
  const ModelOutput a = model.forward(both).sample(1);
  const ModelOutput b = model.forward(second).sample(0);
  for (std::size_t i = 0; i < a.rel_logits.size(); ++i) CHECK(std::abs(a.rel_logits[i] - b.rel_logits[i]) < 1e-12);
  for (std::size_t i = 0; i < a.boxes.size(); ++i) CHECK(std::abs(a.boxes[i] - b.boxes[i]) < 1e-12);
}

TEST_CASE("text encoder") {
  const ModelConfig c;
  const Model model(c, 1);
  NoGradGuard guard;
  const std::vector<int> pad(c.seq_len, kPadToken);
  const Tensor a = model.encode_text(pad, 1);
  for (double v : a.data()) CHECK(std::isfinite(v));
  CHECK(values(a) == values(model.encode_text(pad, 1)));

  std::vector<int> tokens(c.seq_len);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(i + 1);
  std::vector<int> swapped = tokens;
  std::swap(swapped[0], swapped[1]);
  CHECK(values(model.encode_text(tokens, 1)) != values(model.encode_text(swapped, 1)));
  tokens[3] = static_cast<int>(c.vocab);
  CHECK_THROWS_AS(model.encode_text(tokens, 1), DataError);
}

TEST_CASE("image encoder") {
  ModelConfig c;
  c.seq_len = 8;  // 16 patches resampled to 8 positions
  const Model model(c, 1);
  NoGradGuard guard;
  const std::size_t d = c.hidden, n = c.grid * c.grid, ch = c.img_channels;
  const std::vector<double> zero(n * ch, 0.0);
  const Model::ImageEncoding z = model.encode_image(zero, 1);
  CHECK(z.features.shape() == Shape{1, c.seq_len, d});
  for (std::size_t i = 1; i < c.seq_len; ++i) {
    for (std::size_t k = 0; k < d; ++k) CHECK(std::abs(z.features.at({0, i, k}) - z.features.at({0, 0, k})) < 1e-12);
  }

  const auto grid = uniform_values(n * ch, 3, 0.0, 1.0);
  const Model::ImageEncoding a = model.encode_image(grid, 1);
  CHECK(values(a.position) == values(z.position));
  CHECK(values(a.position) == values(image_position_encoding(c.grid, c.seq_len, d)));

  const Tensor resample = resample_matrix(c.seq_len, n);
  for (std::size_t p = 0; p < n; ++p) {
    auto doubled = grid;
    for (std::size_t k = 0; k < ch; ++k) doubled[p * ch + k] *= 2.0;
    const Model::ImageEncoding b = model.encode_image(doubled, 1);
    for (std::size_t i = 0; i < c.seq_len; ++i) {
      bool changed = false;
      for (std::size_t k = 0; k < d; ++k) changed = changed || a.features.at({0, i, k}) != b.features.at({0, i, k});
      if (changed) CHECK(resample.at({i, p}) > 0.0);
    }
  }
}

TEST_CASE("resample matrix rows are interpolation weights") {
  for (auto [t, s] : {std::pair{8u, 16u}, {16u, 16u}, {32u, 64u}, {1u, 4u}, {16u, 4u}}) {
    const Tensor m = resample_matrix(t, s);
    check_rows_sum_to_one(m, 1e-12);
  }
  const Tensor id = resample_matrix(4, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(id.at({i, i}) == 1.0);
}

TEST_CASE("selective attention") {
  const Tensor h_text = random_tensor({1, 1, 6}, 1, false);
  const Tensor h_img = random_tensor({1, 1, 6}, 2, false);
  const Tensor pos = random_tensor({1, 6}, 3, false);
  const SelectiveAttention one = selective_attention(h_text, h_img, pos);
  CHECK(one.text_weights.item() == 1.0);
  CHECK(values(one.text_attn) == values(h_img));
  CHECK(values(one.img_attn) == values(h_text));

  Tensor t = random_tensor({2, 5, 6}, 4);
  Tensor i = random_tensor({2, 5, 6}, 5);
  Tensor p = random_tensor({5, 6}, 6);
  const SelectiveAttention sa = selective_attention(t, i, p);
  check_rows_sum_to_one(sa.text_weights);
  check_rows_sum_to_one(sa.img_weights);
  const auto w = uniform_values(60, 7);
  std::vector<GradProbe> probes = {{"h_text", t}, {"h_img", i}, {"pos_img", p}};
  const auto r = grad_check(
      [&] {
        const SelectiveAttention s = selective_attention(t, i, p);
        return weighted_sum(s.text_attn, w) + weighted_sum(s.img_attn, w);
      },
      probes);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("gated fusion limits") {
  // Positive inputs make the sign of A, B decide the gate.
  const Tensor h = random_tensor({1, 4, 6}, 1, false, 0.5, 1.0);
  const Tensor attn = random_tensor({1, 4, 6}, 2, false, 0.5, 1.0);
  const GatedFusion closed = gated_fusion(h, attn, Tensor::full({6, 6}, -100.0), Tensor::full({6, 6}, -100.0));
  for (std::size_t k = 0; k < h.numel(); ++k) CHECK(std::abs(closed.out.data()[k] - h.data()[k]) < 1e-9);
  const GatedFusion open = gated_fusion(h, attn, Tensor::full({6, 6}, 100.0), Tensor::full({6, 6}, 100.0));
  for (std::size_t k = 0; k < h.numel(); ++k) CHECK(std::abs(open.out.data()[k] - attn.data()[k]) < 1e-9);
  const GatedFusion same = gated_fusion(h, h, random_tensor({6, 6}, 3, false), random_tensor({6, 6}, 4, false));
  CHECK(values(same.out) == values(h));

  Tensor ho = random_tensor({1, 3, 4}, 5);
  Tensor ha = random_tensor({1, 3, 4}, 6);
  Tensor a = random_tensor({4, 4}, 7);
  Tensor b = random_tensor({4, 4}, 8);
  const auto w = uniform_values(12, 9);
  std::vector<GradProbe> probes = {{"h_orig", ho}, {"h_attn", ha}, {"A", a}, {"B", b}};
  CHECK(grad_check([&] { return weighted_sum(gated_fusion(ho, ha, a, b).out, w); }, probes).max_rel_error < 1e-4);
}

TEST_CASE("query transformer output shape and determinism") {
  const ModelConfig c;
  const Model model(c, 4);
  NoGradGuard guard;
  const Tensor memory = random_tensor({2, c.seq_len, c.hidden}, 5, false);
  TransformerTrace trace;
  const Tensor hq = model.query_transformer(memory, &trace);
  CHECK(hq.shape() == Shape{2, c.queries, c.hidden});
  for (double v : hq.data()) CHECK(std::isfinite(v));
  CHECK(values(hq) == values(model.query_transformer(memory, nullptr)));
  CHECK(trace.encoder_self.size() == c.enc_layers);
}

TEST_CASE("heads: identical queries give identical rows") {
  const ModelConfig c = tiny_config();
  const Model model(c, 2);
  NoGradGuard guard;
  std::vector<double> q_row = uniform_values(c.hidden, 3);
  std::vector<double> hq;
  for (std::size_t i = 0; i < c.queries; ++i) hq.insert(hq.end(), q_row.begin(), q_row.end());
  const Tensor h_q = Tensor::from({1, c.queries, c.hidden}, hq);
  const Tensor text = random_tensor({1, c.seq_len, c.hidden}, 4, false);
  const Tensor img = random_tensor({1, c.seq_len, c.hidden}, 5, false);
  const auto ent = model.predict_entities(h_q, text);
  const auto rb = model.predict_relations_boxes(h_q, text, img);
  for (std::size_t qi = 1; qi < c.queries; ++qi) {
    for (std::size_t j = 0; j < c.seq_len; ++j) CHECK(ent.start_logits.at({0, qi, j}) == ent.start_logits.at({0, 0, j}));
    for (std::size_t j = 0; j < c.relations + 1; ++j) CHECK(rb.rel_logits.at({0, qi, j}) == rb.rel_logits.at({0, 0, j}));
  }
}

TEST_CASE("head gradients match finite differences, both head forms") {
  for (HeadForm form : {HeadForm::kMlp, HeadForm::kLiteral}) {
    CAPTURE(head_form_name(form));
    ModelConfig c = tiny_config();
    c.head_form = form;
    Model model(c, 12);
    Tensor h_q = random_tensor({1, c.queries, c.hidden}, 1);
    Tensor text = random_tensor({1, c.seq_len, c.hidden}, 2);
    Tensor img = random_tensor({1, c.seq_len, c.hidden}, 3);
    std::vector<GradProbe> probes = {{"h_q", h_q}, {"text", text}, {"img", img}};
    for (auto& p : model.store().params()) {
      if (p.name.rfind("head.", 0) == 0) probes.push_back({p.name, p.tensor});
    }
    const auto we = uniform_values(2 * c.queries * c.seq_len, 4);
    const auto wr = uniform_values(c.queries * (c.relations + 1), 5);
    const auto wb = uniform_values(c.queries * 4, 6);
    const auto r = grad_check(
        [&] {
          const auto ent = model.predict_entities(h_q, text);
          const auto rb = model.predict_relations_boxes(h_q, text, img);
          const Tensor both[2] = {softmax(ent.start_logits), softmax(ent.end_logits)};
          return weighted_sum(concat(both, -1), we) + weighted_sum(rb.rel_logits, wr) + weighted_sum(rb.boxes, wb);
        },
        probes);
    CAPTURE(r.worst_name);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("full model plus joint loss matches finite differences") {
  const ModelConfig c = tiny_config();
  Model model(c, 21);
  const BatchInput in = random_batch(c, 1, 22);
  const std::vector<Triple> gold = {{{1, 2}, 0, {0.3, 0.4, 0.2, 0.3}}, {{3, 3}, 1, {0.7, 0.6, 0.3, 0.2}}};
  std::vector<GradProbe> probes;
  for (auto& p : model.store().params()) probes.push_back({p.name, p.tensor});
  GradCheckOptions opts;
  opts.fraction = 0.1;
  opts.seed = 3;
  const auto r = grad_check([&] { return joint_loss(model.forward(in), 0, gold, {}).total; }, probes, opts);
  CAPTURE(r.worst_name);
  CHECK(r.checked > 100);
  CHECK(r.max_rel_error < 1e-3);
}
