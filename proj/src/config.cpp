#include "qeot/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "qeot/errors.hpp"

namespace qeot {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_int(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field size_field(T RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_int<T>(k, v); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

template <typename T>
Field data_size_field(T DatasetSpec::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.data.*member = parse_int<T>(k, v); },
          [member](const RunConfig& c) { return std::to_string(c.data.*member); }};
}

Field double_field(std::function<double&(RunConfig&)> ref) {
  return {[ref](RunConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_double(k, v); },
          [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"data_seed", data_size_field(&DatasetSpec::seed)},
      {"n_train", data_size_field(&DatasetSpec::n_train)},
      {"n_test", data_size_field(&DatasetSpec::n_test)},
      {"seq_len", data_size_field(&DatasetSpec::seq_len)},
      {"grid", data_size_field(&DatasetSpec::grid)},
      {"img_channels", data_size_field(&DatasetSpec::img_channels)},
      {"relations", data_size_field(&DatasetSpec::relations)},
      {"max_triples", data_size_field(&DatasetSpec::max_triples)},
      {"entity_vocab", data_size_field(&DatasetSpec::entity_vocab)},
      {"noise", double_field([](RunConfig& c) -> double& { return c.data.noise; })},
      {"hidden", size_field(&RunConfig::hidden)},
      {"queries", size_field(&RunConfig::queries)},
      {"enc_layers", size_field(&RunConfig::enc_layers)},
      {"dec_layers", size_field(&RunConfig::dec_layers)},
      {"heads", size_field(&RunConfig::heads)},
      {"vocab", size_field(&RunConfig::vocab)},
      {"ffn", size_field(&RunConfig::ffn)},
      {"head_form",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.head_form = parse_head_form(v); },
        [](const RunConfig& c) { return std::string(head_form_name(c.head_form)); }}},
      {"w_ent", double_field([](RunConfig& c) -> double& { return c.loss.weights.ent; })},
      {"w_rel", double_field([](RunConfig& c) -> double& { return c.loss.weights.rel; })},
      {"w_l1", double_field([](RunConfig& c) -> double& { return c.loss.weights.l1; })},
      {"w_giou", double_field([](RunConfig& c) -> double& { return c.loss.weights.giou; })},
      {"empty_weight", double_field([](RunConfig& c) -> double& { return c.loss.empty_weight; })},
      {"allow_overflow",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.loss.allow_overflow = parse_bool(k, v); },
        [](const RunConfig& c) { return std::string(c.loss.allow_overflow ? "true" : "false"); }}},
      {"lr", double_field([](RunConfig& c) -> double& { return c.optim.lr; })},
      {"beta1", double_field([](RunConfig& c) -> double& { return c.optim.beta1; })},
      {"beta2", double_field([](RunConfig& c) -> double& { return c.optim.beta2; })},
      {"adam_eps", double_field([](RunConfig& c) -> double& { return c.optim.eps; })},
      {"weight_decay", double_field([](RunConfig& c) -> double& { return c.optim.weight_decay; })},
      {"seed", size_field(&RunConfig::seed)},
      {"steps", size_field(&RunConfig::steps)},
      {"batch", size_field(&RunConfig::batch)},
      {"checkpoint_every", size_field(&RunConfig::checkpoint_every)},
      {"theta", double_field([](RunConfig& c) -> double& { return c.theta; })},
      {"eval_workers", size_field(&RunConfig::eval_workers)},
  };
  return table;
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.seq_len = data.seq_len;
  m.grid = data.grid;
  m.img_channels = data.img_channels;
  m.relations = data.relations;
  m.hidden = hidden;
  m.queries = queries;
  m.enc_layers = enc_layers;
  m.dec_layers = dec_layers;
  m.heads = heads;
  m.vocab = vocab;
  m.ffn = ffn;
  m.head_form = head_form;
  return m;
}

void RunConfig::validate() const {
  data.validate();
  model_config().validate();
  loss.weights.validate();
  if (data.vocab() > vocab) {
    throw ConfigError("vocab (" + std::to_string(vocab) + ") is smaller than the " + std::to_string(data.vocab()) +
                      " token ids the dataset uses");
  }
  if (batch == 0) throw ConfigError("batch must be positive");
  if (!(optim.lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0 && optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(optim.eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(theta > 0.0 && theta < 1.0)) throw ConfigError("theta must lie in (0, 1)");
  if (!(loss.empty_weight >= 0.0)) throw ConfigError("empty_weight must be >= 0");
  if (data.max_triples > queries && !loss.allow_overflow) {
    throw CapacityError("max_triples (" + std::to_string(data.max_triples) + ") exceeds queries (" +
                        std::to_string(queries) + "); raise queries or set allow_overflow=true");
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(*this, key, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + "=" + field.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [name, field] : fields()) out.push_back(name);
  return out;
}

void apply_config_text(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(number, "expected key=value, got '" + line + "'");
    try {
      config.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    apply_config_text(config, buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace qeot
