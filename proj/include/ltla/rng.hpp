#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace ltla {

/// Seeds a named sub-stream ("data", "init", "decode", ...) from a root seed,
/// so components can be varied independently under one --seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Index drawn proportionally to nonnegative weights (need not sum to 1).
  std::size_t categorical(std::span<const double> weights);

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  double normal() {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ltla
