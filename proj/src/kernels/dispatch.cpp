#include <atomic>
#include <cstdlib>
#include <string_view>

#include "qeot/kernels.hpp"

namespace qeot::kernels {

#if !(defined(__x86_64__) || defined(_M_X64))
const KernelTable* avx2_table() { return nullptr; }
#endif
#if !(defined(__aarch64__) || defined(_M_ARM64))
const KernelTable* neon_table() { return nullptr; }
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kNeon:
      return "neon";
  }
  return "unknown";
}

namespace {

const KernelTable* select_table() {
  const char* forced = std::getenv("QEOT_ISA");
  if (forced != nullptr && std::string_view(forced) == "scalar") return &scalar_table();
  if (const KernelTable* t = avx2_table()) return t;
  if (const KernelTable* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{select_table()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

const KernelTable& set_active(const KernelTable& table) {
  return *current().exchange(&table);
}

}  // namespace qeot::kernels
