#include "qeot/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "qeot/errors.hpp"
#include "qeot/rng.hpp"

namespace qeot {

Tensor ParameterStore::create(const std::string& name, Shape shape, InitKind init) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name " + name);
  std::uint64_t stream = mix_seed(seed_, fnv1a(name));
  for (std::size_t d : shape) stream = mix_seed(stream, d);
  Rng rng(stream);
  std::vector<double> values(shape_numel(shape));
  switch (init) {
    case InitKind::kUniformFanIn: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape.front()));
      for (double& v : values) v = rng.uniform(-bound, bound);
      break;
    }
    case InitKind::kZeros:
      break;
    case InitKind::kOnes:
      for (double& v : values) v = 1.0;
      break;
    case InitKind::kNormal002:
      for (double& v : values) v = rng.normal(0.0, 0.02);
      break;
  }
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  index_[name] = params_.size();
  params_.push_back({name, t});
  return t;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Tensor ParameterStore::get(const std::string& name) const {
  const Parameter* p = find(name);
  if (!p) throw ContractError("unknown parameter " + name);
  return p->tensor;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

namespace {

constexpr char kMagic[8] = {'Q', 'E', 'O', 'T', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw DataError("truncated checkpoint " + path.string());
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) put<std::uint64_t>(os, d);
    for (double v : r.data) put<double>(os, v);
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported");
  }
  const auto count = get<std::uint32_t>(is, path);
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const auto name_len = get<std::uint32_t>(is, path);
    r.name.resize(name_len);
    if (!is.read(r.name.data(), name_len)) throw DataError("truncated checkpoint " + path.string());
    const auto rank = get<std::uint32_t>(is, path);
    for (std::uint32_t k = 0; k < rank; ++k) r.shape.push_back(get<std::uint64_t>(is, path));
    r.data.resize(shape_numel(r.shape));
    for (double& v : r.data) v = get<double>(is, path);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<CheckpointRecord> snapshot(const ParameterStore& store) {
  std::vector<CheckpointRecord> out;
  for (const auto& p : store.params()) {
    out.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  }
  return out;
}

void restore(ParameterStore& store, const std::vector<CheckpointRecord>& records) {
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (auto& p : store.params()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DataError("checkpoint has no parameter " + p.name);
    if (it->second->shape != p.tensor.shape()) {
      throw DataError("parameter " + p.name + " has shape " + shape_str(it->second->shape) +
                      " in checkpoint but " + shape_str(p.tensor.shape()) + " in the model");
    }
    auto dst = p.tensor.mutable_data();
    std::copy(it->second->data.begin(), it->second->data.end(), dst.begin());
  }
}

}  // namespace qeot
