#pragma once
// Synthetic sentence/image pairs with gold triples, and their JSONL form.
//
// Token ids: 0 is padding, 1..kFillerTokens are filler words, and the rest
// spell entity words (each 1 to 3 tokens, no token shared between words).
// Each gold triple paints a grid-aligned rectangle whose channels carry a
// signature of (entity word, relation): channel r is 1 for relation r, and
// channels R.. hold the entity word index in binary.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qeot/types.hpp"

namespace qeot {

inline constexpr int kPadToken = 0;
inline constexpr int kFillerTokens = 8;

struct Sample {
  std::string id;
  std::vector<int> tokens;
  std::size_t grid = 0;      // side G
  std::size_t channels = 0;  // c
  std::vector<double> pixels;  // G x G x c, (y, x, channel)
  std::vector<Triple> gold;

  bool operator==(const Sample&) const = default;
};

struct DatasetSpec {
  std::uint64_t seed = 1;
  std::size_t n_train = 2000;
  std::size_t n_test = 200;
  std::size_t seq_len = 16;
  std::size_t grid = 4;
  std::size_t img_channels = 16;
  std::size_t relations = 8;
  std::size_t max_triples = 5;
  std::size_t entity_vocab = 12;
  double noise = 0.05;

  // Throws CapacityError when samples cannot be built (too many triples for
  // the sentence, the grid or the entity vocabulary, or too few channels for
  // the signature) and ConfigError for other invalid values.
  void validate() const;
  // Number of distinct token ids the generator can emit.
  std::size_t vocab() const;
  bool operator==(const DatasetSpec&) const = default;
};

struct EntityWord {
  std::vector<int> tokens;
};

// The entity vocabulary shared by both splits; a function of (seed,
// entity_vocab).
std::vector<EntityWord> entity_lexicon(const DatasetSpec& spec);

struct DatasetSplits {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// Sample `index` of a split ("train" or "test"); depends only on (spec,
// split, index).
Sample generate_sample(const DatasetSpec& spec, const std::string& split, std::size_t index);
DatasetSplits generate(const DatasetSpec& spec);

// Structural checks: spans inside the sentence, boxes in [0, 1], relation
// ids in [0, relations), finite pixels in [0, 1]. Throws DataError naming
// the sample id.
void validate_sample(const Sample& s, std::size_t relations);
// Additionally checks the sample fits a model's (L, G, c).
void check_sample_shape(const Sample& s, std::size_t seq_len, std::size_t grid, std::size_t channels);

// One JSON object per line: {"id", "tokens", "grid": [y][x][c],
// "gold": [{"start", "end", "rel", "box": [cx, cy, w, h]}]}.
std::string to_json_line(const Sample& s);
Sample from_json_line(const std::string& line, std::size_t line_number);
void save_jsonl(const std::vector<Sample>& samples, const std::filesystem::path& path);
// Malformed lines throw ParseError with the 1-based line number; samples
// failing validate_sample (with relations unchecked) throw DataError.
std::vector<Sample> load_jsonl(const std::filesystem::path& path);

}  // namespace qeot
