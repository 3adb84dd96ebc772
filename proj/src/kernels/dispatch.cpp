#include <atomic>
#include <cstdlib>
#include <string>

#include "fzg/error.hpp"
#include "fzg/kernels.hpp"

namespace fzg::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(FZG_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* best_table() {
#if defined(FZG_HAVE_AVX2)
  if (cpu_has_avx2()) return &avx2_table();
#endif
#if defined(FZG_HAVE_NEON)
  return &neon_table();
#endif
  return &scalar_table();
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("FZG_KERNELS"); env && *env) {
    const std::string_view name(env);
    if (name != "auto") return &table(parse_isa(name));
  }
  return best_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{initial_table()};
  return ptr;
}

}  // namespace

bool supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
      return cpu_has_avx2();
    case Isa::kNeon:
#if defined(FZG_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

std::vector<Isa> available() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::kScalar, Isa::kAvx2, Isa::kNeon}) {
    if (supported(isa)) out.push_back(isa);
  }
  return out;
}

const KernelTable& table(Isa isa) {
  if (!supported(isa)) {
    throw ConfigError("kernel ISA '" + std::string(isa_name(isa)) + "' is not available");
  }
  switch (isa) {
#if defined(FZG_HAVE_AVX2)
    case Isa::kAvx2:
      return avx2_table();
#endif
#if defined(FZG_HAVE_NEON)
    case Isa::kNeon:
      return neon_table();
#endif
    default:
      return scalar_table();
  }
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Isa isa) { current().store(&table(isa), std::memory_order_release); }

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::kScalar;
  if (name == "avx2") return Isa::kAvx2;
  if (name == "neon") return Isa::kNeon;
  throw ConfigError("unknown kernel ISA '" + std::string(name) + "'");
}

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

}  // namespace fzg::kernels
