#include "qeot/model.hpp"

#include <cmath>
#include <string>

#include "qeot/errors.hpp"
#include "qeot/ops.hpp"

namespace qeot {

const char* head_form_name(HeadForm form) { return form == HeadForm::kMlp ? "mlp" : "literal"; }

HeadForm parse_head_form(const std::string& text) {
  if (text == "mlp") return HeadForm::kMlp;
  if (text == "literal") return HeadForm::kLiteral;
  throw ConfigError("head_form must be 'mlp' or 'literal', got '" + text + "'");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(seq_len, "seq_len");
  positive(grid, "grid");
  positive(hidden, "hidden");
  positive(queries, "queries");
  positive(relations, "relations");
  positive(heads, "heads");
  positive(vocab, "vocab");
  positive(img_channels, "img_channels");
  positive(ffn, "ffn");
  if (hidden % heads != 0) {
    throw ConfigError("hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (hidden % 4 != 0) throw ConfigError("hidden must be divisible by 4 for the 2-D position encoding");
}

ModelOutput BatchOutput::sample(std::size_t b) const {
  ModelOutput out;
  out.queries = boxes.dim(1);
  out.seq_len = start_dist.dim(2);
  out.relations = rel_logits.dim(2) - 1;
  auto slice = [b](const Tensor& t) {
    const std::size_t per = t.numel() / t.dim(0);
    const auto d = t.data();
    return std::vector<double>(d.begin() + static_cast<std::ptrdiff_t>(b * per),
                               d.begin() + static_cast<std::ptrdiff_t>((b + 1) * per));
  };
  out.start_dist = slice(start_dist);
  out.end_dist = slice(end_dist);
  out.rel_logits = slice(rel_logits);
  out.boxes = slice(boxes);
  return out;
}

Tensor resample_matrix(std::size_t target, std::size_t source) {
  std::vector<double> m(target * source, 0.0);
  for (std::size_t i = 0; i < target; ++i) {
    if (target == source) {
      m[i * source + i] = 1.0;
      continue;
    }
    const double s = target == 1 ? 0.5 * static_cast<double>(source - 1)
                                 : static_cast<double>(i) * static_cast<double>(source - 1) /
                                       static_cast<double>(target - 1);
    const auto j0 = static_cast<std::size_t>(std::floor(s));
    const double f = s - static_cast<double>(j0);
    m[i * source + j0] += 1.0 - f;
    if (f > 0.0) m[i * source + j0 + 1] += f;
  }
  return Tensor::from({target, source}, std::move(m));
}

namespace {

void sinusoid(double pos, std::size_t channels, double* out) {
  for (std::size_t k = 0; k + 1 < channels; k += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(channels));
    out[k] = std::sin(pos * freq);
    out[k + 1] = std::cos(pos * freq);
  }
}

Tensor constant_matmul(const Tensor& a, const Tensor& b) {
  NoGradGuard guard;
  return matmul(a, b);
}

}  // namespace

Tensor text_position_encoding(std::size_t seq_len, std::size_t d) {
  std::vector<double> pe(seq_len * d, 0.0);
  for (std::size_t i = 0; i < seq_len; ++i) sinusoid(static_cast<double>(i), d, pe.data() + i * d);
  return Tensor::from({seq_len, d}, std::move(pe));
}

Tensor image_position_encoding(std::size_t grid, std::size_t seq_len, std::size_t d) {
  const std::size_t n = grid * grid;
  const std::size_t half = d / 2;
  std::vector<double> pe(n * d, 0.0);
  for (std::size_t y = 0; y < grid; ++y) {
    for (std::size_t x = 0; x < grid; ++x) {
      double* row = pe.data() + (y * grid + x) * d;
      sinusoid(static_cast<double>(x), half, row);
      sinusoid(static_cast<double>(y), half, row + half);
    }
  }
  return constant_matmul(resample_matrix(seq_len, n), Tensor::from({n, d}, std::move(pe)));
}

SelectiveAttention selective_attention(const Tensor& h_text, const Tensor& h_img, const Tensor& pos_img) {
  if (h_text.shape() != h_img.shape()) {
    throw DimensionError("selective_attention: text " + shape_str(h_text.shape()) + " vs image " +
                         shape_str(h_img.shape()));
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(h_text.dim(-1)));
  SelectiveAttention out;
  out.text_weights = softmax(matmul(h_text, transpose(h_text)) * s);
  out.text_attn = matmul(out.text_weights, h_img);
  const Tensor qi = h_img + pos_img;
  out.img_weights = softmax(matmul(qi, transpose(qi)) * s);
  out.img_attn = matmul(out.img_weights, h_text);
  return out;
}

GatedFusion gated_fusion(const Tensor& h_orig, const Tensor& h_attn, const Tensor& a, const Tensor& b) {
  GatedFusion out;
  out.gate = sigmoid(matmul(h_attn, a) + matmul(h_orig, b));
  out.out = h_orig + out.gate * (h_attn - h_orig);
  return out;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config), store_(seed) {
  config_.validate();
  const std::size_t d = config_.hidden;
  const bool mlp = config_.head_form == HeadForm::kMlp;

  store_.create("text.embed", {config_.vocab, d}, InitKind::kUniformFanIn);
  add_norm("text.block.ln1");
  add_attention("text.block.attn");
  add_norm("text.block.ln2");
  add_feed_forward("text.block.ffn");

  add_linear("image.proj", config_.img_channels, d);

  for (const char* branch : {"fusion.text_gate", "fusion.img_gate"}) {
    store_.create(std::string(branch) + ".A", {d, d}, InitKind::kUniformFanIn);
    store_.create(std::string(branch) + ".B", {d, d}, InitKind::kUniformFanIn);
  }

  for (std::size_t i = 0; i < config_.enc_layers; ++i) {
    const std::string p = "encoder." + std::to_string(i);
    add_norm(p + ".ln1");
    add_attention(p + ".attn");
    add_norm(p + ".ln2");
    add_feed_forward(p + ".ffn");
  }
  add_norm("encoder.norm");

  store_.create("queries", {config_.queries, d}, InitKind::kNormal002);
  for (std::size_t i = 0; i < config_.dec_layers; ++i) {
    const std::string p = "decoder." + std::to_string(i);
    add_norm(p + ".ln1");
    add_attention(p + ".self_attn");
    add_norm(p + ".ln2");
    add_attention(p + ".cross_attn");
    add_norm(p + ".ln3");
    add_feed_forward(p + ".ffn");
  }
  add_norm("decoder.norm");

  const std::size_t classes = config_.relations + 1;
  add_linear("head.cross", 2 * d, d);
  if (mlp) {
    add_linear("head.ent.in", d, d);
    add_linear("head.ent.out", d, 2);
    add_linear("head.rel.in", d, d);
    add_linear("head.rel.out", d, classes);
    add_linear("head.box.in", d, d);
    add_linear("head.box.out", d, 4);
  } else {
    add_linear("head.ent", d, 2);
    add_linear("head.rel", d, classes);
    add_linear("head.box", d, 4);
  }

  resample_ = resample_matrix(config_.seq_len, config_.grid * config_.grid);
  text_pos_ = text_position_encoding(config_.seq_len, d);
  image_pos_ = image_position_encoding(config_.grid, config_.seq_len, d);
}

void Model::add_linear(const std::string& name, std::size_t in, std::size_t out, bool bias) {
  store_.create(name + ".w", {in, out}, InitKind::kUniformFanIn);
  if (bias) store_.create(name + ".b", {out}, InitKind::kZeros);
}

void Model::add_norm(const std::string& name) {
  store_.create(name + ".g", {config_.hidden}, InitKind::kOnes);
  store_.create(name + ".b", {config_.hidden}, InitKind::kZeros);
}

void Model::add_attention(const std::string& name) {
  for (const char* part : {".q", ".k", ".v", ".o"}) add_linear(name + part, config_.hidden, config_.hidden);
}

void Model::add_feed_forward(const std::string& name) {
  add_linear(name + ".in", config_.hidden, config_.ffn);
  add_linear(name + ".out", config_.ffn, config_.hidden);
}

Tensor Model::linear(const Tensor& x, const std::string& name) const {
  Tensor y = matmul(x, store_.get(name + ".w"));
  if (store_.find(name + ".b") != nullptr) y = y + store_.get(name + ".b");
  return y;
}

Tensor Model::norm(const Tensor& x, const std::string& name) const {
  return layer_norm(x, store_.get(name + ".g"), store_.get(name + ".b"));
}

Tensor Model::feed_forward(const Tensor& x, const std::string& name) const {
  return linear(relu(linear(x, name + ".in")), name + ".out");
}

AttentionResult Model::attention(const Tensor& x_q, const Tensor& x_kv, const std::string& name) const {
  const std::size_t b = x_q.dim(0);
  const std::size_t tq = x_q.dim(1);
  const std::size_t tk = x_kv.dim(1);
  const std::size_t h = config_.heads;
  const std::size_t dh = config_.hidden / h;
  auto split = [&](const Tensor& t, std::size_t len) { return permute(reshape(t, {b, len, h, dh}), {0, 2, 1, 3}); };
  const Tensor q = split(linear(x_q, name + ".q"), tq);
  const Tensor k = split(linear(x_kv, name + ".k"), tk);
  const Tensor v = split(linear(x_kv, name + ".v"), tk);
  AttentionResult r;
  r.weights = softmax(matmul(q, transpose(k)) * (1.0 / std::sqrt(static_cast<double>(dh))));
  const Tensor merged = reshape(permute(matmul(r.weights, v), {0, 2, 1, 3}), {b, tq, config_.hidden});
  r.out = linear(merged, name + ".o");
  return r;
}

Tensor Model::encode_text(std::span<const int> tokens, std::size_t batch) const {
  const std::size_t l = config_.seq_len;
  if (tokens.size() != batch * l) {
    throw DimensionError("encode_text: expected " + std::to_string(batch * l) + " tokens, got " +
                         std::to_string(tokens.size()));
  }
  Tensor x = embedding(store_.get("text.embed"), tokens, {batch, l}) *
                 std::sqrt(static_cast<double>(config_.hidden)) +
             text_pos_;
  const Tensor n1 = norm(x, "text.block.ln1");
  x = x + attention(n1, n1, "text.block.attn").out;
  return x + feed_forward(norm(x, "text.block.ln2"), "text.block.ffn");
}

Model::ImageEncoding Model::encode_image(std::span<const double> grids, std::size_t batch) const {
  const std::size_t n = config_.grid * config_.grid;
  const std::size_t c = config_.img_channels;
  if (grids.size() != batch * n * c) {
    throw DimensionError("encode_image: expected " + std::to_string(batch * n * c) + " grid values, got " +
                         std::to_string(grids.size()));
  }
  const Tensor raw = Tensor::from({batch, n, c}, std::vector<double>(grids.begin(), grids.end()));
  const Tensor patches = linear(raw, "image.proj");
  return {matmul(resample_, patches), image_pos_};
}

Tensor Model::query_transformer(const Tensor& memory, TransformerTrace* trace) const {
  Tensor x = memory;
  for (std::size_t i = 0; i < config_.enc_layers; ++i) {
    const std::string p = "encoder." + std::to_string(i);
    const Tensor n1 = norm(x, p + ".ln1");
    AttentionResult a = attention(n1, n1, p + ".attn");
    if (trace != nullptr) trace->encoder_self.push_back(a.weights);
    x = x + a.out;
    x = x + feed_forward(norm(x, p + ".ln2"), p + ".ffn");
  }
  const Tensor mem = norm(x, "encoder.norm");

  const std::size_t b = memory.dim(0);
  Tensor t = Tensor::zeros({b, config_.queries, config_.hidden}) + store_.get("queries");
  for (std::size_t i = 0; i < config_.dec_layers; ++i) {
    const std::string p = "decoder." + std::to_string(i);
    const Tensor n1 = norm(t, p + ".ln1");
    AttentionResult s = attention(n1, n1, p + ".self_attn");
    t = t + s.out;
    AttentionResult c = attention(norm(t, p + ".ln2"), mem, p + ".cross_attn");
    t = t + c.out;
    t = t + feed_forward(norm(t, p + ".ln3"), p + ".ffn");
    if (trace != nullptr) {
      trace->decoder_self.push_back(s.weights);
      trace->decoder_cross.push_back(c.weights);
    }
  }
  return norm(t, "decoder.norm");
}

Model::EntityScores Model::predict_entities(const Tensor& h_q, const Tensor& text_out) const {
  const std::size_t b = h_q.dim(0);
  const std::size_t q = h_q.dim(1);
  const std::size_t l = text_out.dim(1);
  // (H_q + H_text) W + b computed as (H_q W + b) + H_text W, broadcast to
  // [B, Q, L, width].
  auto pair_sum = [&](const std::string& name) {
    const Tensor w = store_.get(name + ".w");
    const std::size_t width = w.dim(1);
    const Tensor from_q = reshape(linear(h_q, name), {b, q, 1, width});
    const Tensor from_text = reshape(matmul(text_out, w), {b, 1, l, width});
    return from_q + from_text;
  };
  Tensor scores;
  if (config_.head_form == HeadForm::kMlp) {
    scores = linear(relu(pair_sum("head.ent.in")), "head.ent.out");
  } else {
    scores = relu(pair_sum("head.ent"));
  }
  return {select_last(scores, 0), select_last(scores, 1)};
}

Model::RelationBoxes Model::predict_relations_boxes(const Tensor& h_q, const Tensor& text_out,
                                                    const Tensor& img_out) const {
  const std::size_t b = h_q.dim(0);
  const Tensor means[2] = {mean_axis(text_out, 1), mean_axis(img_out, 1)};
  const Tensor cross = reshape(linear(concat(means, -1), "head.cross"), {b, 1, config_.hidden});
  const Tensor h_rel = h_q + cross;
  RelationBoxes out;
  if (config_.head_form == HeadForm::kMlp) {
    out.rel_logits = linear(relu(linear(h_rel, "head.rel.in")), "head.rel.out");
    out.boxes = sigmoid(linear(relu(linear(h_q, "head.box.in")), "head.box.out"));
  } else {
    out.rel_logits = relu(linear(h_rel, "head.rel"));
    out.boxes = sigmoid(relu(linear(h_q, "head.box")));
  }
  return out;
}

BatchOutput Model::forward(const BatchInput& input) const {
  if (input.batch == 0) throw DimensionError("forward: empty batch");
  const Tensor h_text = encode_text(input.tokens, input.batch);
  const ImageEncoding img = encode_image(input.grids, input.batch);
  const SelectiveAttention sa = selective_attention(h_text, img.features, img.position);
  const GatedFusion text = gated_fusion(h_text, sa.text_attn, store_.get("fusion.text_gate.A"),
                                        store_.get("fusion.text_gate.B"));
  const GatedFusion image = gated_fusion(img.features, sa.img_attn, store_.get("fusion.img_gate.A"),
                                         store_.get("fusion.img_gate.B"));

  BatchOutput out;
  out.fusion.text_out = text.out;
  out.fusion.img_out = image.out;
  out.fusion.text_gate = text.gate;
  out.fusion.img_gate = image.gate;
  out.fusion.text_attention = sa.text_weights;
  out.fusion.img_attention = sa.img_weights;
  {
    NoGradGuard guard;
    const double s = 1.0 / std::sqrt(static_cast<double>(config_.hidden));
    out.fusion.img_to_text_cross = softmax(matmul(img.features + img.position, transpose(h_text)) * s);
  }

  const Tensor h_q = query_transformer(image.out + img.position, &out.transformer);
  const EntityScores ent = predict_entities(h_q, text.out);
  const RelationBoxes rb = predict_relations_boxes(h_q, text.out, image.out);
  out.start_logits = ent.start_logits;
  out.end_logits = ent.end_logits;
  out.start_dist = softmax(ent.start_logits);
  out.end_dist = softmax(ent.end_logits);
  out.rel_logits = rb.rel_logits;
  out.boxes = rb.boxes;
  return out;
}

}  // namespace qeot
