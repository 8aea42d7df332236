#include <atomic>
#include <cstdlib>
#include <string>

#include "ltla/simd.hpp"

namespace ltla::simd {

#if defined(LTLA_BUILD_AVX2)
const Kernels& avx2_table();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(LTLA_BUILD_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Kernels* initial_choice() {
  if (const char* env = std::getenv("LTLA_SIMD"); env != nullptr && std::string(env) == "scalar") {
    return &scalar_kernels();
  }
  if (const Kernels* k = avx2_kernels()) return k;
  return &scalar_kernels();
}

std::atomic<const Kernels*>& slot() {
  static std::atomic<const Kernels*> chosen{initial_choice()};
  return chosen;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

const Kernels* avx2_kernels() {
#if defined(LTLA_BUILD_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const Kernels& active() { return *slot().load(std::memory_order_relaxed); }

bool select(Isa isa) {
  const Kernels* k = isa == Isa::scalar ? &scalar_kernels() : avx2_kernels();
  if (k == nullptr) return false;
  slot().store(k, std::memory_order_relaxed);
  return true;
}

}  // namespace ltla::simd
