#pragma once

#include <cstdint>
#include <random>

namespace doccog {

// Seeded generator whose output is identical on every platform.
// std::uniform_real_distribution is implementation-defined, so the
// mapping from raw bits to [0, 1) is done by hand.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace doccog
