#include "qeot/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "qeot/errors.hpp"
#include "qeot/params.hpp"
#include "qeot/rng.hpp"

namespace qeot {

namespace fs = std::filesystem;

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t dataset_size, std::size_t batch,
                                       std::size_t step) {
  if (dataset_size == 0) throw DataError("training set is empty");
  std::vector<std::size_t> out;
  out.reserve(batch);
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm;
  for (std::size_t k = 0; k < batch; ++k) {
    const std::size_t pos = step * batch + k;
    const std::size_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      perm.resize(dataset_size);
      for (std::size_t i = 0; i < dataset_size; ++i) perm[i] = i;
      Rng rng(mix_seed(mix_seed(seed, fnv1a("batch-order")), epoch));
      for (std::size_t i = dataset_size; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

std::string TrainLogLine::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["total"] = result.total;
  j["ent"] = result.ent;
  j["rel"] = result.rel;
  j["l1"] = result.l1;
  j["giou"] = result.giou;
  j["lr"] = lr;
  return j.dump();
}

void save_training_checkpoint(const fs::path& path, const Model& model, const AdamW& optimizer) {
  auto records = snapshot(model.store());
  auto state = optimizer.state_records(model.store());
  records.insert(records.end(), std::make_move_iterator(state.begin()), std::make_move_iterator(state.end()));
  const fs::path tmp = path.string() + ".tmp";
  write_checkpoint(tmp, records);
  fs::rename(tmp, path);
}

std::size_t load_training_checkpoint(const fs::path& path, Model& model, AdamW* optimizer) {
  const auto records = read_checkpoint(path);
  restore(model.store(), records);
  bool has_state = false;
  for (const auto& r : records) has_state = has_state || r.name == "adam.t";
  if (!has_state) return 0;
  if (optimizer != nullptr) {
    optimizer->load_state(model.store(), records);
    return static_cast<std::size_t>(optimizer->steps_taken());
  }
  for (const auto& r : records) {
    if (r.name == "adam.t") return static_cast<std::size_t>(r.data.at(0));
  }
  return 0;
}

namespace {

std::vector<std::string> log_lines_up_to(const fs::path& log, std::size_t step) {
  std::vector<std::string> out;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step")) continue;
    if (j["step"].get<std::size_t>() <= step) out.push_back(line);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

TrainOutcome train(const RunConfig& config, const std::vector<Sample>& train, const fs::path& out_dir,
                   const std::optional<fs::path>& resume, const TrainHooks& hooks) {
  config.validate();
  const ModelConfig mc = config.model_config();
  for (const Sample& s : train) {
    check_sample_shape(s, mc.seq_len, mc.grid, mc.img_channels);
    validate_sample(s, mc.relations);
    if (s.gold.size() > mc.queries && !config.loss.allow_overflow) {
      throw CapacityError("sample '" + s.id + "' has " + std::to_string(s.gold.size()) + " triples but only " +
                          std::to_string(mc.queries) + " queries");
    }
    for (int t : s.tokens) {
      if (static_cast<std::size_t>(t) >= mc.vocab) {
        throw DataError("sample '" + s.id + "': token " + std::to_string(t) + " outside vocab");
      }
    }
  }
  fs::create_directories(out_dir);
  write_text(out_dir / "config.txt", config.to_text());

  Model model(mc, config.seed);
  AdamW optimizer(model.store(), config.optim);
  std::size_t start = 0;
  std::vector<std::string> kept;
  if (resume) {
    start = load_training_checkpoint(*resume, model, &optimizer);
    kept = log_lines_up_to(resume->parent_path() / "train_log.jsonl", start);
  }

  TrainOutcome outcome;
  outcome.log = out_dir / "train_log.jsonl";
  outcome.checkpoint = out_dir / "checkpoint.bin";
  std::ofstream log(outcome.log, std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + outcome.log.string());
  for (const auto& line : kept) log << line << '\n';

  std::vector<const Sample*> batch;
  for (std::size_t step = start; step < config.steps; ++step) {
    batch.clear();
    for (std::size_t i : batch_indices(config.seed, train.size(), config.batch, step)) batch.push_back(&train[i]);
    TrainLogLine line;
    line.step = step + 1;
    line.lr = optimizer.options().lr;
    try {
      line.result = train_step(model, optimizer, batch, config.loss);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step + 1) + ": " + e.what());
    }
    log << line.to_json() << '\n';
    if (hooks.on_step) hooks.on_step(line);
    outcome.last = line.result;
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      log.flush();
      save_training_checkpoint(out_dir / ("checkpoint-" + std::to_string(step + 1) + ".bin"), model, optimizer);
    }
  }
  log.flush();
  save_training_checkpoint(outcome.checkpoint, model, optimizer);
  outcome.steps_done = std::max(start, config.steps);
  return outcome;
}

Model load_model(const RunConfig& config, const fs::path& checkpoint) {
  Model model(config.model_config(), config.seed);
  load_training_checkpoint(checkpoint, model, nullptr);
  return model;
}

std::vector<double> decoder_cross_attention(const BatchOutput& out, std::size_t b) {
  const Tensor& w = out.transformer.decoder_cross.back();  // [B, h, Q, L]
  const std::size_t h = w.dim(1), q = w.dim(2), l = w.dim(3);
  std::vector<double> avg(q * l, 0.0);
  const auto d = w.data();
  for (std::size_t head = 0; head < h; ++head) {
    const double* src = d.data() + ((b * h + head) * q) * l;
    for (std::size_t i = 0; i < q * l; ++i) avg[i] += src[i] / static_cast<double>(h);
  }
  return avg;
}

namespace {

void write_csv(const fs::path& path, const double* v, std::size_t rows, std::size_t cols) {
  std::ostringstream os;
  os << std::setprecision(10);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) os << (c ? "," : "") << v[r * cols + c];
    os << '\n';
  }
  write_text(path, os.str());
}

}  // namespace

InspectFiles inspect(const Model& model, const std::vector<Sample>& samples, const std::string& id,
                     const fs::path& out_dir) {
  const Sample* sample = nullptr;
  for (const Sample& s : samples) {
    if (s.id == id) sample = &s;
  }
  if (sample == nullptr) throw DataError("no sample with id '" + id + "'");
  const ModelConfig& mc = model.config();
  check_sample_shape(*sample, mc.seq_len, mc.grid, mc.img_channels);

  NoGradGuard guard;
  const Sample* one[1] = {sample};
  const BatchOutput out = model.forward(make_batch(one));
  fs::create_directories(out_dir);
  InspectFiles files;
  const std::size_t l = mc.seq_len;
  const std::size_t q = mc.queries;
  auto dump = [&](const std::string& name, const double* v, std::size_t rows, std::size_t cols) {
    const fs::path p = out_dir / name;
    write_csv(p, v, rows, cols);
    files.written.push_back(p);
  };
  dump("selective_text.csv", out.fusion.text_attention.data().data(), l, l);
  dump("selective_img.csv", out.fusion.img_attention.data().data(), l, l);
  dump("selective_img_to_text_cross.csv", out.fusion.img_to_text_cross.data().data(), l, l);
  for (std::size_t layer = 0; layer < out.transformer.decoder_cross.size(); ++layer) {
    const Tensor& w = out.transformer.decoder_cross[layer];
    const std::size_t h = w.dim(1);
    std::vector<double> avg(q * l, 0.0);
    for (std::size_t head = 0; head < h; ++head) {
      for (std::size_t i = 0; i < q * l; ++i) avg[i] += w.data()[head * q * l + i] / static_cast<double>(h);
    }
    dump("decoder_cross_layer" + std::to_string(layer) + ".csv", avg.data(), q, l);
  }
  const std::size_t d = mc.hidden;
  std::vector<double> gates(l * 2, 0.0);
  for (std::size_t t = 0; t < l; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      gates[t * 2] += out.fusion.text_gate.data()[t * d + c] / static_cast<double>(d);
      gates[t * 2 + 1] += out.fusion.img_gate.data()[t * d + c] / static_cast<double>(d);
    }
  }
  dump("gates.csv", gates.data(), l, 2);
  return files;
}

}  // namespace qeot
