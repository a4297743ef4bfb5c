#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "qeot/config.hpp"
#include "qeot/errors.hpp"
#include "qeot/params.hpp"
#include "qeot/pipeline.hpp"

using namespace qeot;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "qeot_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run cli(const std::string& args) {
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = std::string(QEOT_CLI_PATH) + " " + args + " 2>" + err.string();
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err);
  r.err.assign(std::istreambuf_iterator<char>(in), {});
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::vector<double>> read_csv(const fs::path& p) {
  std::vector<std::vector<double>> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

std::vector<double> log_totals(const fs::path& log) {
  std::vector<double> out;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line)["total"].get<double>());
  return out;
}

const std::string kSmallData = "--set n_train=120 --set n_test=20";

const fs::path& data_dir() {
  static const fs::path dir = [] {
    const fs::path d = work_dir() / "data";
    const Run r = cli("gen-data " + kSmallData + " --out " + d.string());
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("gen-data writes both splits and a config echo, reproducibly") {
  const fs::path a = work_dir() / "gen-a", b = work_dir() / "gen-b";
  const Run ra = cli("gen-data " + kSmallData + " --seed 5 --out " + a.string());
  const Run rb = cli("gen-data " + kSmallData + " --seed 5 --out " + b.string());
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  CHECK(ra.out.find("train: 120 samples") != std::string::npos);
  for (const char* f : {"train.jsonl", "test.jsonl", "config.txt"}) {
    CHECK(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(slurp(a / "config.txt").find("data_seed=5") != std::string::npos);
}

TEST_CASE("invalid input exits with code 2") {
  const Run cap = cli("gen-data --set max_triples=17 --out " + (work_dir() / "bad").string());
  CHECK(cap.code == 2);
  CHECK(cap.err.find("max_triples") != std::string::npos);
  CHECK(cli("gen-data --set no_such_key=1 --out " + (work_dir() / "bad").string()).code == 2);
  CHECK(cli("train").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("train --data " + (work_dir() / "missing.jsonl").string()).code == 1);

  {
    std::ofstream cfg(work_dir() / "bad.cfg");
    cfg << "hidden=64\nthis line is wrong\n";
  }
  const Run parse = cli("gen-data --config " + (work_dir() / "bad.cfg").string());
  CHECK(parse.code == 2);
  CHECK(parse.err.find("line 2") != std::string::npos);
}

TEST_CASE("settings precedence: defaults < config file < --set < flags") {
  RunConfig cfg;
  apply_config_text(cfg, "# comment\nsteps = 70\nlr=0.001\n\nheads=2\n");
  CHECK(cfg.steps == 70);
  CHECK(cfg.optim.lr == 0.001);
  CHECK(cfg.heads == 2);
  cfg.set("steps", "80");
  CHECK(cfg.steps == 80);
  CHECK_THROWS_AS(cfg.set("steps", "-3"), ConfigError);
  CHECK_THROWS_AS(cfg.set("head_form", "cnn"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(cfg, "steps\n"), ParseError);

  RunConfig round;
  apply_config_text(round, cfg.to_text());
  CHECK(round.to_text() == cfg.to_text());
  CHECK(RunConfig::keys().size() > 30);

  {
    std::ofstream f(work_dir() / "prec.cfg");
    f << "steps=7\nseed=3\n";
  }
  const fs::path out = work_dir() / "prec";
  const Run r = cli("train --quiet --data " + (data_dir() / "train.jsonl").string() + " --config " +
                     (work_dir() / "prec.cfg").string() + " --set steps=5 --steps 2 --out " + out.string());
  REQUIRE(r.code == 0);
  CHECK(log_totals(out / "train_log.jsonl").size() == 2);
  const std::string echo = slurp(out / "config.txt");
  CHECK(echo.find("steps=2\n") != std::string::npos);
  CHECK(echo.find("seed=3\n") != std::string::npos);
}

TEST_CASE("train: loss falls, resume reproduces an uninterrupted run, --steps 0 is the init") {
  const std::string data = (data_dir() / "train.jsonl").string();
  const fs::path full = work_dir() / "full", first = work_dir() / "first", second = work_dir() / "second";
  const std::string common = " --quiet --set checkpoint_every=50 --data " + data;
  REQUIRE(cli("train --steps 100" + common + " --out " + full.string()).code == 0);
  REQUIRE(cli("train --steps 50" + common + " --out " + first.string()).code == 0);
  const Run resumed =
      cli("train --steps 100" + common + " --resume " + (first / "checkpoint.bin").string() + " --out " + second.string());
  REQUIRE(resumed.code == 0);

  const auto a = log_totals(full / "train_log.jsonl");
  const auto b = log_totals(second / "train_log.jsonl");
  REQUIRE(a.size() == 100);
  REQUIRE(b.size() == 100);
  CHECK(std::abs(a.back() - b.back()) < 1e-9);
  CHECK(slurp(full / "train_log.jsonl") == slurp(second / "train_log.jsonl"));
  CHECK(slurp(full / "checkpoint.bin") == slurp(second / "checkpoint.bin"));
  CHECK(fs::exists(full / "checkpoint-50.bin"));
  CHECK(slurp(full / "checkpoint-50.bin") == slurp(first / "checkpoint.bin"));

  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += a[static_cast<std::size_t>(i)] / 10.0;
    tail += a[a.size() - 10 + static_cast<std::size_t>(i)] / 10.0;
  }
  CAPTURE(head);
  CAPTURE(tail);
  CHECK(tail < head);

  const fs::path zero = work_dir() / "zero";
  REQUIRE(cli("train --steps 0 --quiet --data " + data + " --out " + zero.string()).code == 0);
  RunConfig cfg;
  const Model init(cfg.model_config(), cfg.seed);
  const auto expect = snapshot(init.store());
  const auto got = read_checkpoint(zero / "checkpoint.bin");
  REQUIRE(got.size() >= expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(got[i].name == expect[i].name);
    CHECK(got[i].data == expect[i].data);
  }
}

TEST_CASE("eval and inspect") {
  const std::string test = (data_dir() / "test.jsonl").string();
  const fs::path run = work_dir() / "untrained";
  REQUIRE(cli("train --steps 0 --quiet --data " + (data_dir() / "train.jsonl").string() + " --out " + run.string())
              .code == 0);
  const std::string ckpt = (run / "checkpoint.bin").string();

  const fs::path per = work_dir() / "per_sample.jsonl";
  const Run ev = cli("eval --checkpoint " + ckpt + " --data " + test + " --workers 2 --per-sample " + per.string());
  REQUIRE(ev.code == 0);
  const auto report = nlohmann::json::parse(ev.out);
  CHECK(report["triple_f1"].get<double>() < 0.1);
  CHECK(report["samples"].get<int>() == 20);
  std::ifstream ps(per);
  int lines = 0;
  for (std::string l; std::getline(ps, l);) ++lines;
  CHECK(lines == 20);
  CHECK(cli("eval --checkpoint " + ckpt + " --data " + test).out == ev.out);

  const Run mismatch = cli("eval --set hidden=32 --checkpoint " + ckpt + " --data " + test);
  CHECK(mismatch.code != 0);
  CHECK(mismatch.err.find("text.embed") != std::string::npos);

  const fs::path ins = work_dir() / "inspect";
  const Run r = cli("inspect --checkpoint " + ckpt + " --data " + test + " --sample test-3 --out " + ins.string());
  REQUIRE(r.code == 0);
  const RunConfig cfg;
  const std::size_t l = cfg.data.seq_len, q = cfg.queries;
  for (const char* name : {"selective_text.csv", "selective_img.csv", "selective_img_to_text_cross.csv",
                           "decoder_cross_layer0.csv", "decoder_cross_layer1.csv"}) {
    CAPTURE(name);
    const auto rows = read_csv(ins / "test-3" / name);
    const bool decoder = std::string(name).rfind("decoder", 0) == 0;
    CHECK(rows.size() == (decoder ? q : l));
    for (const auto& row : rows) {
      CHECK(row.size() == l);
      double s = 0.0;
      for (double v : row) s += v;
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
  const auto gates = read_csv(ins / "test-3" / "gates.csv");
  CHECK(gates.size() == l);
  CHECK(fs::exists(ins / "test-3" / "config.txt"));

  CHECK(cli("inspect --checkpoint " + ckpt + " --data " + test + " --sample nope --out " + ins.string()).code == 2);
}

TEST_CASE("batch order is a pure function of (seed, step)") {
  const auto a = batch_indices(4, 10, 8, 3);
  CHECK(a == batch_indices(4, 10, 8, 3));
  CHECK(a != batch_indices(5, 10, 8, 3));
  // Every epoch visits each sample once.
  std::vector<int> seen(10, 0);
  for (std::size_t step = 0; step < 5; ++step) {
    for (std::size_t i : batch_indices(4, 10, 2, step)) ++seen[i];
  }
  for (int s : seen) CHECK(s == 1);
  CHECK_THROWS_AS(batch_indices(1, 0, 8, 0), DataError);
}
