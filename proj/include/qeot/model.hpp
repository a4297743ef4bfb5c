#pragma once
// The entity-object triple network, batched: every tensor carries a leading
// batch axis B. Shapes below use L (sentence length), d (hidden size),
// Q (queries), R (relations), G (grid side), c (image channels).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qeot/params.hpp"
#include "qeot/tensor.hpp"
#include "qeot/types.hpp"

namespace qeot {

// kMlp: each head is Linear -> ReLU -> Linear (then softmax / sigmoid).
// kLiteral: ReLU(x W + b) fed straight into softmax / sigmoid.
enum class HeadForm { kMlp, kLiteral };

const char* head_form_name(HeadForm form);
HeadForm parse_head_form(const std::string& text);

struct ModelConfig {
  std::size_t seq_len = 16;
  std::size_t grid = 4;
  std::size_t hidden = 64;
  std::size_t queries = 5;
  std::size_t relations = 8;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t heads = 4;
  std::size_t vocab = 64;
  std::size_t img_channels = 16;
  std::size_t ffn = 128;
  HeadForm head_form = HeadForm::kMlp;

  // Throws ConfigError.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct BatchInput {
  std::size_t batch = 0;
  std::vector<int> tokens;    // B x L
  std::vector<double> grids;  // B x G x G x c, row-major (y, x, channel)
};

// Attention weights and gates kept for inspection. Values only; never used
// for further computation.
struct FusionState {
  Tensor text_out;        // [B, L, d]
  Tensor img_out;         // [B, L, d]
  Tensor text_gate;       // [B, L, d]
  Tensor img_gate;        // [B, L, d]
  Tensor text_attention;  // [B, L, L] softmax(H_t H_t^T / sqrt d)
  Tensor img_attention;   // [B, L, L] softmax(Q_i K_i^T / sqrt d)
  // Cross-similarity reading of the image-to-text map: softmax over text
  // tokens of (H_img + Pos) H_text^T / sqrt d. [B, L, L]
  Tensor img_to_text_cross;
};

struct TransformerTrace {
  std::vector<Tensor> encoder_self;   // per layer [B, heads, L, L]
  std::vector<Tensor> decoder_self;   // per layer [B, heads, Q, Q]
  std::vector<Tensor> decoder_cross;  // per layer [B, heads, Q, L]
};

struct BatchOutput {
  Tensor start_logits;  // [B, Q, L]
  Tensor end_logits;    // [B, Q, L]
  Tensor start_dist;    // [B, Q, L]
  Tensor end_dist;      // [B, Q, L]
  Tensor rel_logits;    // [B, Q, R + 1]
  Tensor boxes;         // [B, Q, 4] cxcywh in (0, 1)
  FusionState fusion;
  TransformerTrace transformer;

  std::size_t batch() const { return boxes.dim(0); }
  // Plain-value copy of sample b.
  ModelOutput sample(std::size_t b) const;
};

// Fixed [L, n] linear-interpolation matrix taking n source positions to L
// target positions; the identity when n == L.
Tensor resample_matrix(std::size_t target, std::size_t source);
// 1-D sinusoid, [L, d].
Tensor text_position_encoding(std::size_t seq_len, std::size_t d);
// 2-D sinusoid over the G x G patches (first d/2 channels x, last d/2 y),
// resampled to [L, d].
Tensor image_position_encoding(std::size_t grid, std::size_t seq_len, std::size_t d);

struct SelectiveAttention {
  Tensor text_attn;  // [B, L, d]
  Tensor img_attn;   // [B, L, d]
  Tensor text_weights;
  Tensor img_weights;
};

// Single head, d_k = d. Weights from each modality's own similarity, values
// from the other modality.
SelectiveAttention selective_attention(const Tensor& h_text, const Tensor& h_img, const Tensor& pos_img);

struct GatedFusion {
  Tensor out;
  Tensor gate;
};

// gate = sigmoid(H_attn A + H_orig B); out = (1 - gate) H_orig + gate H_attn.
GatedFusion gated_fusion(const Tensor& h_orig, const Tensor& h_attn, const Tensor& a, const Tensor& b);

struct AttentionResult {
  Tensor out;      // [B, Tq, d]
  Tensor weights;  // [B, heads, Tq, Tk]
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  // tokens B x L -> [B, L, d]. Out-of-vocabulary ids throw DataError.
  Tensor encode_text(std::span<const int> tokens, std::size_t batch) const;
  struct ImageEncoding {
    Tensor features;  // [B, L, d]
    Tensor position;  // [L, d]
  };
  ImageEncoding encode_image(std::span<const double> grids, std::size_t batch) const;

  // Memory [B, L, d] -> H_q [B, Q, d].
  Tensor query_transformer(const Tensor& memory, TransformerTrace* trace) const;

  struct EntityScores {
    Tensor start_logits;
    Tensor end_logits;
  };
  EntityScores predict_entities(const Tensor& h_q, const Tensor& text_out) const;

  struct RelationBoxes {
    Tensor rel_logits;
    Tensor boxes;
  };
  RelationBoxes predict_relations_boxes(const Tensor& h_q, const Tensor& text_out, const Tensor& img_out) const;

  BatchOutput forward(const BatchInput& input) const;

 private:
  Tensor linear(const Tensor& x, const std::string& name) const;
  Tensor norm(const Tensor& x, const std::string& name) const;
  Tensor feed_forward(const Tensor& x, const std::string& name) const;
  AttentionResult attention(const Tensor& x_q, const Tensor& x_kv, const std::string& name) const;
  void add_linear(const std::string& name, std::size_t in, std::size_t out, bool bias = true);
  void add_norm(const std::string& name);
  void add_attention(const std::string& name);
  void add_feed_forward(const std::string& name);

  ModelConfig config_;
  ParameterStore store_;
  Tensor resample_;   // [L, G^2]
  Tensor text_pos_;   // [L, d]
  Tensor image_pos_;  // [L, d]
};

}  // namespace qeot
