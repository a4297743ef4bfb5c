// qeot: generate synthetic data, train, evaluate and inspect.
//
// Settings come from built-in defaults, then --config FILE, then --set
// key=value (repeatable), then dedicated flags such as --steps; later
// sources win. Outputs default to $QEOT_RUN_DIR/<command> (QEOT_RUN_DIR
// defaults to ./runs).
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid input or config.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qeot/config.hpp"
#include "qeot/data.hpp"
#include "qeot/errors.hpp"
#include "qeot/evaluation.hpp"
#include "qeot/pipeline.hpp"

namespace fs = std::filesystem;
using namespace qeot;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "key=value config file");
  cmd->add_option("--set", c.sets, "override one setting, key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "seed (data_seed for gen-data, seed otherwise)");
  cmd->add_option("--out", c.out, "output directory");
}

RunConfig load_config(const Common& c) {
  RunConfig cfg;
  if (!c.config_file.empty()) apply_config_file(cfg, c.config_file);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return cfg;
}

fs::path out_dir(const Common& c, const char* command) {
  if (!c.out.empty()) return c.out;
  const char* root = std::getenv("QEOT_RUN_DIR");
  return fs::path(root != nullptr && *root != '\0' ? root : "runs") / command;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

std::vector<Sample> load_samples(const fs::path& p) {
  if (!fs::exists(p)) throw std::runtime_error("dataset file not found: " + p.string());
  return load_jsonl(p);
}

int gen_data(Common& c) {
  RunConfig cfg = load_config(c);
  if (c.seed) cfg.data.seed = *c.seed;
  cfg.data.validate();
  const fs::path dir = out_dir(c, "data");
  fs::create_directories(dir);
  const DatasetSplits d = generate(cfg.data);
  save_jsonl(d.train, dir / "train.jsonl");
  save_jsonl(d.test, dir / "test.jsonl");
  write_file(dir / "config.txt", cfg.to_text());
  std::size_t triples[2] = {0, 0};
  for (const auto& s : d.train) triples[0] += s.gold.size();
  for (const auto& s : d.test) triples[1] += s.gold.size();
  std::cout << "train: " << d.train.size() << " samples, " << triples[0] << " triples\n"
            << "test: " << d.test.size() << " samples, " << triples[1] << " triples\n"
            << "written to " << dir.string() << "\n";
  return 0;
}

int train_cmd(Common& c, const std::string& data, std::optional<std::size_t> steps,
              const std::string& resume, bool quiet) {
  RunConfig cfg = load_config(c);
  if (c.seed) cfg.seed = *c.seed;
  if (steps) cfg.steps = *steps;
  const fs::path dir = out_dir(c, "train");
  const auto samples = load_samples(data);
  TrainHooks hooks;
  if (!quiet) {
    hooks.on_step = [&](const TrainLogLine& line) {
      if (line.step % 100 == 0 || line.step == cfg.steps) std::cerr << line.to_json() << "\n";
    };
  }
  const TrainOutcome out =
      train(cfg, samples, dir, resume.empty() ? std::nullopt : std::optional<fs::path>(resume), hooks);
  std::cout << "checkpoint: " << out.checkpoint.string() << "\n";
  if (out.last) {
    TrainLogLine last{out.steps_done, *out.last, cfg.optim.lr};
    std::cout << last.to_json() << "\n";
  }
  return 0;
}

int eval_cmd(Common& c, const std::string& checkpoint, const std::string& data, const std::string& per_sample,
             std::optional<std::size_t> workers) {
  RunConfig cfg = load_config(c);
  if (c.seed) cfg.seed = *c.seed;
  if (workers) cfg.eval_workers = *workers;
  cfg.validate();
  const Model model = load_model(cfg, checkpoint);
  const auto samples = load_samples(data);
  EvalOptions opts;
  opts.theta = cfg.theta;
  opts.workers = cfg.eval_workers;
  std::vector<SampleResult> results;
  const MetricsReport report = evaluate_dataset(model, samples, opts, per_sample.empty() ? nullptr : &results);
  if (!per_sample.empty()) {
    std::string text;
    for (const auto& r : results) text += sample_result_json(r) + "\n";
    write_file(per_sample, text);
  }
  std::cout << report.to_json() << "\n";
  return 0;
}

int inspect_cmd(Common& c, const std::string& checkpoint, const std::string& data, const std::string& id) {
  RunConfig cfg = load_config(c);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  const Model model = load_model(cfg, checkpoint);
  const auto samples = load_samples(data);
  const fs::path dir = out_dir(c, "inspect") / id;
  const InspectFiles files = inspect(model, samples, id, dir);
  write_file(dir / "config.txt", cfg.to_text());
  for (const auto& f : files.written) std::cout << f.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entity-object relational triple extraction on synthetic image-text data"};
  app.require_subcommand(1);
  app.footer("Precedence: defaults < --config < --set < dedicated flags. Outputs go to --out or "
             "$QEOT_RUN_DIR/<command>. Exit codes: 0 ok, 1 runtime failure, 2 invalid input.");

  Common gen_c, train_c, eval_c, inspect_c;
  auto* gen = app.add_subcommand("gen-data", "write train.jsonl, test.jsonl and config.txt");
  add_common(gen, gen_c);

  std::string train_data, resume;
  std::optional<std::size_t> steps;
  bool quiet = false;
  auto* tr = app.add_subcommand("train", "train a model; writes checkpoints and train_log.jsonl");
  add_common(tr, train_c);
  tr->add_option("--data", train_data, "training JSONL")->required();
  tr->add_option("--steps", steps, "total optimizer steps");
  tr->add_option("--resume", resume, "checkpoint to continue from");
  tr->add_flag("--quiet", quiet, "no progress lines on stderr");

  std::string eval_ckpt, eval_data, per_sample;
  std::optional<std::size_t> workers;
  auto* ev = app.add_subcommand("eval", "print the metrics report as JSON");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "JSONL to evaluate")->required();
  ev->add_option("--per-sample", per_sample, "write decoded triples and counts per sample (JSONL)");
  ev->add_option("--workers", workers, "evaluation threads");

  std::string ins_ckpt, ins_data, sample_id;
  auto* ins = app.add_subcommand("inspect", "dump attention maps and gates for one sample as CSV");
  add_common(ins, inspect_c);
  ins->add_option("--checkpoint", ins_ckpt, "checkpoint file")->required();
  ins->add_option("--data", ins_data, "JSONL holding the sample")->required();
  ins->add_option("--sample", sample_id, "sample id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return gen_data(gen_c);
    if (*tr) return train_cmd(train_c, train_data, steps, resume, quiet);
    if (*ev) return eval_cmd(eval_c, eval_ckpt, eval_data, per_sample, workers);
    if (*ins) return inspect_cmd(inspect_c, ins_ckpt, ins_data, sample_id);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CapacityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
