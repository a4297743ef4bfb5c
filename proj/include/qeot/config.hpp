#pragma once
// key=value run configuration. One setting per line; '#' starts a comment.
// The dataset shape keys (seq_len, grid, img_channels, relations) are shared
// by the generator and the model.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qeot/data.hpp"
#include "qeot/loss.hpp"
#include "qeot/model.hpp"
#include "qeot/optim.hpp"

namespace qeot {

struct RunConfig {
  DatasetSpec data;
  // Model-only settings; the shared shape keys live in `data`.
  std::size_t hidden = 64;
  std::size_t queries = 5;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t heads = 4;
  std::size_t vocab = 64;
  std::size_t ffn = 128;
  HeadForm head_form = HeadForm::kMlp;

  LossOptions loss;
  AdamWOptions optim;

  std::uint64_t seed = 1;  // weight init and batch order
  std::size_t steps = 5000;
  std::size_t batch = 8;
  std::size_t checkpoint_every = 500;
  double theta = 0.5;
  std::size_t eval_workers = 1;

  ModelConfig model_config() const;
  // Throws ConfigError / CapacityError.
  void validate() const;

  // Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  // Every key in a fixed order, one "key=value" per line.
  std::string to_text() const;
  static std::vector<std::string> keys();
};

// Applies a key=value file on top of `config`. Errors carry the line number.
void apply_config_file(RunConfig& config, const std::filesystem::path& path);
void apply_config_text(RunConfig& config, const std::string& text);

}  // namespace qeot
