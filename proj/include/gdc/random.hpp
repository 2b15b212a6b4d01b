#pragma once

#include <cstdint>
#include <random>

namespace gdc {

/// Seeded generator with a platform-independent uniform draw. The standard
/// distributions are implementation-defined, so they are avoided wherever
/// a result must be reproducible bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const auto k = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  /// Independent child stream, used to give each consumer its own sequence.
  Rng split() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace gdc
