#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qeot/params.hpp"

namespace qeot {

struct AdamWOptions {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay (Loshchilov & Hutter):
//   p <- p - lr * wd * p
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
class AdamW {
 public:
  AdamW(const ParameterStore& store, AdamWOptions options);

  // Applies one update from the parameters' current grads. Throws
  // NumericError naming the parameter if any gradient is non-finite; in that
  // case no parameter is modified.
  void step(ParameterStore& store);

  std::int64_t steps_taken() const { return t_; }
  const AdamWOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

  // Moments as checkpoint records ("adam.m/<name>", "adam.v/<name>",
  // "adam.t").
  std::vector<CheckpointRecord> state_records(const ParameterStore& store) const;
  void load_state(const ParameterStore& store, const std::vector<CheckpointRecord>& records);

 private:
  AdamWOptions options_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace qeot
