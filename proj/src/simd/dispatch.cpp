#include <atomic>
#include <cstdlib>
#include <string>

#include "sslseg/errors.hpp"
#include "sslseg/simd.hpp"

namespace sslseg::simd {

#if !defined(SSLSEG_HAVE_AVX2)
const KernelTable* avx2_kernels() { return nullptr; }
#endif

namespace {

bool cpu_has_avx2() {
#if defined(SSLSEG_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return &scalar_kernels();
    case Isa::avx2:
      return cpu_has_avx2() ? avx2_kernels() : nullptr;
  }
  return nullptr;
}

const KernelTable* select_initial() {
  if (const char* env = std::getenv("SSLSEG_ISA")) {
    const std::string want(env);
    if (want == "scalar") return &scalar_kernels();
    if (want == "avx2" && table_for(Isa::avx2) != nullptr) return table_for(Isa::avx2);
  }
  if (const KernelTable* t = table_for(Isa::avx2)) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& active() {
  static std::atomic<const KernelTable*> table{select_initial()};
  return table;
}

}  // namespace

bool isa_supported(Isa isa) { return table_for(isa) != nullptr; }

std::vector<Isa> supported_isas() {
  std::vector<Isa> out{Isa::scalar};
  if (isa_supported(Isa::avx2)) out.push_back(Isa::avx2);
  return out;
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

const KernelTable& kernels() { return *active().load(std::memory_order_acquire); }

void set_isa(Isa isa) {
  const KernelTable* t = table_for(isa);
  if (t == nullptr) throw ConfigError("ISA not supported on this CPU: " + std::string(isa_name(isa)));
  active().store(t, std::memory_order_release);
}

Isa active_isa() { return kernels().isa; }

}  // namespace sslseg::simd
