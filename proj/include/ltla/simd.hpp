#pragma once

// Double-precision inner-loop kernels with a scalar reference implementation
// and an AVX2/FMA variant picked once at startup. Everything numeric in the
// HMM, Monarch and lookahead paths funnels through this table, so the two
// variants are checked against each other in tests/test_simd.cpp.
//
// Set LTLA_SIMD=scalar in the environment to pin the reference kernels.

#include <cstddef>
#include <span>
#include <string_view>

namespace ltla::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

struct Kernels {
  Isa isa;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // out = x * y (elementwise)
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
  // acc += x * y (elementwise)
  void (*mul_acc)(const double* x, const double* y, double* acc, std::size_t n);
  void (*scale)(double a, double* x, std::size_t n);
  // y = A x, A row-major rows x cols
  void (*gemv)(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
  // y = A^T x, A row-major rows x cols; y has cols entries
  void (*gemv_t)(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
};

const Kernels& scalar_kernels();

/// AVX2 table, or nullptr when it was not compiled in or the CPU lacks AVX2/FMA.
const Kernels* avx2_kernels();

/// The table used by the library. Chosen on first call.
const Kernels& active();

/// Overrides the active table (tests and benchmarks). Returns false if the
/// requested ISA is unavailable, leaving the selection unchanged.
bool select(Isa isa);

// Span conveniences over the active table.

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}

inline void mul(std::span<const double> x, std::span<const double> y, std::span<double> out) {
  active().mul(x.data(), y.data(), out.data(), x.size());
}

inline void mul_acc(std::span<const double> x, std::span<const double> y, std::span<double> acc) {
  active().mul_acc(x.data(), y.data(), acc.data(), x.size());
}

inline void scale(double a, std::span<double> x) { active().scale(a, x.data(), x.size()); }

}  // namespace ltla::simd
