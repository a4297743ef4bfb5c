#include "qeot/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "json.hpp"
#include "qeot/errors.hpp"
#include "qeot/rng.hpp"

namespace qeot {

namespace {

std::size_t code_bits(std::size_t words) {
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) <= words) ++bits;  // codes run 1..words
  return bits;
}

}  // namespace

void DatasetSpec::validate() const {
  if (seq_len == 0 || grid == 0 || relations == 0 || entity_vocab == 0) {
    throw ConfigError("seq_len, grid, relations and entity_vocab must be positive");
  }
  if (max_triples == 0) throw ConfigError("max_triples must be positive");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be a finite value >= 0");
  if (max_triples * 3 > seq_len) {
    throw CapacityError("max_triples (" + std::to_string(max_triples) + ") entity words of up to 3 tokens " +
                        "do not fit seq_len " + std::to_string(seq_len));
  }
  if (max_triples > grid * grid) {
    throw CapacityError("max_triples (" + std::to_string(max_triples) + ") boxes do not fit a " +
                        std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  }
  if (max_triples > entity_vocab) {
    throw CapacityError("max_triples (" + std::to_string(max_triples) + ") exceeds entity_vocab (" +
                        std::to_string(entity_vocab) + "); entities within a sample are distinct");
  }
  if (img_channels < relations + code_bits(entity_vocab)) {
    throw CapacityError("img_channels (" + std::to_string(img_channels) + ") must be at least relations + " +
                        std::to_string(code_bits(entity_vocab)) + " to hold the box signature");
  }
}

std::vector<EntityWord> entity_lexicon(const DatasetSpec& spec) {
  Rng rng(mix_seed(spec.seed, fnv1a("lexicon")));
  std::vector<EntityWord> words(spec.entity_vocab);
  int next = 1 + kFillerTokens;
  for (auto& w : words) {
    const auto len = 1 + rng.below(3);
    for (std::uint64_t i = 0; i < len; ++i) w.tokens.push_back(next++);
  }
  return words;
}

std::size_t DatasetSpec::vocab() const {
  std::size_t n = 1 + kFillerTokens;
  for (const auto& w : entity_lexicon(*this)) n += w.tokens.size();
  return n;
}

namespace {

struct Rect {
  std::size_t x, y, w, h;
};

// Grid-aligned, non-overlapping rectangles of 1-2 cells per side. Each
// placement is drawn uniformly among those that leave room for the rest.
std::vector<Rect> place_rects(Rng& rng, std::size_t count, std::size_t g) {
  std::vector<char> used(g * g, 0);
  std::size_t free_cells = g * g;
  std::vector<Rect> out;
  std::vector<Rect> options;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t remaining = count - k - 1;
    options.clear();
    for (std::size_t h = 1; h <= std::min<std::size_t>(2, g); ++h) {
      for (std::size_t w = 1; w <= std::min<std::size_t>(2, g); ++w) {
        if (free_cells < w * h + remaining) continue;
        for (std::size_t y = 0; y + h <= g; ++y) {
          for (std::size_t x = 0; x + w <= g; ++x) {
            bool ok = true;
            for (std::size_t yy = y; yy < y + h && ok; ++yy) {
              for (std::size_t xx = x; xx < x + w; ++xx) ok = ok && !used[yy * g + xx];
            }
            if (ok) options.push_back({x, y, w, h});
          }
        }
      }
    }
    const Rect r = options[rng.below(options.size())];
    for (std::size_t yy = r.y; yy < r.y + r.h; ++yy) {
      for (std::size_t xx = r.x; xx < r.x + r.w; ++xx) used[yy * g + xx] = 1;
    }
    free_cells -= r.w * r.h;
    out.push_back(r);
  }
  return out;
}

}  // namespace

Sample generate_sample(const DatasetSpec& spec, const std::string& split, std::size_t index) {
  spec.validate();
  const auto lexicon = entity_lexicon(spec);
  Sample s;
  s.id = split + "-" + std::to_string(index);
  Rng rng(mix_seed(spec.seed, fnv1a(s.id)));

  const std::size_t k = 1 + rng.below(spec.max_triples);
  // Distinct entity words: partial Fisher-Yates over the lexicon.
  std::vector<std::size_t> order(lexicon.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
  std::vector<int> rels(k);
  for (auto& r : rels) r = static_cast<int>(rng.below(spec.relations));

  // Sentence: the k entity words and filler tokens in a random order.
  std::size_t entity_tokens = 0;
  for (std::size_t i = 0; i < k; ++i) entity_tokens += lexicon[order[i]].tokens.size();
  const std::size_t fillers = spec.seq_len - entity_tokens;
  std::vector<int> items;  // >= 0: triple index; -1: one filler token
  for (std::size_t i = 0; i < k; ++i) items.push_back(static_cast<int>(i));
  items.insert(items.end(), fillers, -1);
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.below(i)]);
  std::vector<Span> spans(k);
  for (int item : items) {
    if (item < 0) {
      s.tokens.push_back(1 + static_cast<int>(rng.below(kFillerTokens)));
      continue;
    }
    const auto& word = lexicon[order[static_cast<std::size_t>(item)]].tokens;
    spans[static_cast<std::size_t>(item)] = {static_cast<int>(s.tokens.size()),
                                             static_cast<int>(s.tokens.size() + word.size() - 1)};
    s.tokens.insert(s.tokens.end(), word.begin(), word.end());
  }

  const std::size_t g = spec.grid;
  const std::size_t c = spec.img_channels;
  s.grid = g;
  s.channels = c;
  s.pixels.assign(g * g * c, 0.0);
  const auto rects = place_rects(rng, k, g);
  const double gd = static_cast<double>(g);
  for (std::size_t i = 0; i < k; ++i) {
    const Rect& r = rects[i];
    const std::size_t code = order[i] + 1;
    for (std::size_t yy = r.y; yy < r.y + r.h; ++yy) {
      for (std::size_t xx = r.x; xx < r.x + r.w; ++xx) {
        double* px = s.pixels.data() + (yy * g + xx) * c;
        px[rels[i]] = 1.0;
        for (std::size_t b = 0; spec.relations + b < c; ++b) px[spec.relations + b] = (code >> b) & 1U ? 1.0 : 0.0;
      }
    }
    Triple t;
    t.entity = spans[i];
    t.relation = rels[i];
    t.box = {(static_cast<double>(r.x) + 0.5 * static_cast<double>(r.w)) / gd,
             (static_cast<double>(r.y) + 0.5 * static_cast<double>(r.h)) / gd, static_cast<double>(r.w) / gd,
             static_cast<double>(r.h) / gd};
    s.gold.push_back(t);
  }
  if (spec.noise > 0.0) {
    for (double& v : s.pixels) v = std::clamp(v + rng.normal(0.0, spec.noise), 0.0, 1.0);
  }
  return s;
}

DatasetSplits generate(const DatasetSpec& spec) {
  spec.validate();
  DatasetSplits out;
  out.train.reserve(spec.n_train);
  out.test.reserve(spec.n_test);
  for (std::size_t i = 0; i < spec.n_train; ++i) out.train.push_back(generate_sample(spec, "train", i));
  for (std::size_t i = 0; i < spec.n_test; ++i) out.test.push_back(generate_sample(spec, "test", i));
  return out;
}

void validate_sample(const Sample& s, std::size_t relations) {
  auto fail = [&](const std::string& what) { throw DataError("sample '" + s.id + "': " + what); };
  if (s.tokens.empty()) fail("no tokens");
  for (int t : s.tokens) {
    if (t < 0) fail("negative token id");
  }
  if (s.grid == 0 || s.channels == 0 || s.pixels.size() != s.grid * s.grid * s.channels) fail("grid has the wrong size");
  for (double v : s.pixels) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) fail("pixel value outside [0, 1]");
  }
  const int len = static_cast<int>(s.tokens.size());
  for (std::size_t i = 0; i < s.gold.size(); ++i) {
    const Triple& t = s.gold[i];
    const std::string tag = "gold[" + std::to_string(i) + "] ";
    if (t.entity.start < 0 || t.entity.end < t.entity.start || t.entity.end >= len) fail(tag + "span outside the sentence");
    if (t.relation < 0 || (relations > 0 && static_cast<std::size_t>(t.relation) >= relations)) {
      fail(tag + "relation " + std::to_string(t.relation) + " out of range");
    }
    for (double v : {t.box.cx, t.box.cy, t.box.w, t.box.h}) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) fail(tag + "box outside [0, 1]");
    }
  }
}

void check_sample_shape(const Sample& s, std::size_t seq_len, std::size_t grid, std::size_t channels) {
  if (s.tokens.size() != seq_len || s.grid != grid || s.channels != channels) {
    throw DataError("sample '" + s.id + "': shape (L=" + std::to_string(s.tokens.size()) +
                    ", G=" + std::to_string(s.grid) + ", c=" + std::to_string(s.channels) +
                    ") does not match the model (L=" + std::to_string(seq_len) + ", G=" + std::to_string(grid) +
                    ", c=" + std::to_string(channels) + ")");
  }
}

std::string to_json_line(const Sample& s) {
  nlohmann::json grid = nlohmann::json::array();
  for (std::size_t y = 0; y < s.grid; ++y) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t x = 0; x < s.grid; ++x) {
      const auto* px = s.pixels.data() + (y * s.grid + x) * s.channels;
      row.push_back(std::vector<double>(px, px + s.channels));
    }
    grid.push_back(std::move(row));
  }
  nlohmann::json gold = nlohmann::json::array();
  for (const Triple& t : s.gold) {
    gold.push_back({{"start", t.entity.start},
                    {"end", t.entity.end},
                    {"rel", t.relation},
                    {"box", {t.box.cx, t.box.cy, t.box.w, t.box.h}}});
  }
  nlohmann::json j;
  j["id"] = s.id;
  j["tokens"] = s.tokens;
  j["grid"] = std::move(grid);
  j["gold"] = std::move(gold);
  return j.dump();
}

Sample from_json_line(const std::string& line, std::size_t line_number) {
  Sample s;
  try {
    const auto j = nlohmann::json::parse(line);
    s.id = j.at("id").get<std::string>();
    s.tokens = j.at("tokens").get<std::vector<int>>();
    const auto& grid = j.at("grid");
    s.grid = grid.size();
    for (const auto& row : grid) {
      if (row.size() != s.grid) throw ParseError(line_number, "grid is not square");
      for (const auto& px : row) {
        const auto values = px.get<std::vector<double>>();
        if (s.channels == 0) s.channels = values.size();
        if (values.size() != s.channels) throw ParseError(line_number, "grid cells differ in channel count");
        s.pixels.insert(s.pixels.end(), values.begin(), values.end());
      }
    }
    for (const auto& g : j.at("gold")) {
      Triple t;
      t.entity = {g.at("start").get<int>(), g.at("end").get<int>()};
      t.relation = g.at("rel").get<int>();
      const auto box = g.at("box").get<std::vector<double>>();
      if (box.size() != 4) throw ParseError(line_number, "box needs 4 numbers");
      t.box = {box[0], box[1], box[2], box[3]};
      s.gold.push_back(t);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line_number, e.what());
  }
  return s;
}

void save_jsonl(const std::vector<Sample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const Sample& s : samples) out << to_json_line(s) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Sample> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Sample s = from_json_line(line, number);
    validate_sample(s, 0);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace qeot
