#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qeot/tensor.hpp"

namespace qeot {

struct Parameter {
  std::string name;
  Tensor tensor;
};

enum class InitKind {
  kUniformFanIn,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = shape[0]
  kZeros,
  kOnes,
  kNormal002,  // N(0, 0.02)
};

// Named trainable tensors. Each parameter's initial values come from its own
// generator seeded by (seed, name, shape), so adding or reordering parameters
// never changes the values of the others.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor create(const std::string& name, Shape shape, InitKind init);

  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }
  const Parameter* find(const std::string& name) const;
  Tensor get(const std::string& name) const;
  std::size_t total_size() const;
  void zero_grad();

 private:
  std::uint64_t seed_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Checkpoint archive. Layout, all integers little-endian:
//   magic "QEOTCKPT" | u32 version | u32 record_count
//   per record: u32 name_len | name bytes | u32 rank | u64 dims[rank] |
//               f64 data[prod(dims)]
// Records appear in the order given, so identical inputs give identical bytes.
struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

std::vector<CheckpointRecord> snapshot(const ParameterStore& store);
// Copies matching records into the store. Every store parameter must be
// present with the same shape; a mismatch throws DataError naming it.
void restore(ParameterStore& store, const std::vector<CheckpointRecord>& records);

}  // namespace qeot
