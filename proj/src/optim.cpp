#include "qeot/optim.hpp"

#include <cmath>
#include <map>

#include "qeot/errors.hpp"

namespace qeot {

AdamW::AdamW(const ParameterStore& store, AdamWOptions options) : options_(options) {
  if (!(options_.lr >= 0.0)) throw ContractError("learning rate must be non-negative");
  for (const auto& p : store.params()) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step(ParameterStore& store) {
  auto& params = store.params();
  if (params.size() != m_.size()) throw ContractError("optimizer built for a different parameter set");
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = options_.lr;
  const double decay = 1.0 - lr * options_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].tensor.mutable_data();
    const auto grad = params[i].tensor.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      value[j] = value[j] * decay - lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

std::vector<CheckpointRecord> AdamW::state_records(const ParameterStore& store) const {
  std::vector<CheckpointRecord> out;
  const auto& params = store.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"adam.m/" + params[i].name, params[i].tensor.shape(), m_[i]});
    out.push_back({"adam.v/" + params[i].name, params[i].tensor.shape(), v_[i]});
  }
  out.push_back({"adam.t", {1}, {static_cast<double>(t_)}});
  return out;
}

void AdamW::load_state(const ParameterStore& store, const std::vector<CheckpointRecord>& records) {
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  const auto& params = store.params();
  auto fetch = [&](const std::string& name, std::vector<double>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint has no optimizer record " + name);
    if (it->second->data.size() != dst.size()) throw DataError("optimizer record " + name + " has the wrong size");
    dst = it->second->data;
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    fetch("adam.m/" + params[i].name, m_[i]);
    fetch("adam.v/" + params[i].name, v_[i]);
  }
  auto it = by_name.find("adam.t");
  if (it == by_name.end()) throw DataError("checkpoint has no optimizer step count");
  t_ = static_cast<std::int64_t>(it->second->data.at(0));
}

}  // namespace qeot
