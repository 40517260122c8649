#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace moco {

// Deterministic RNG with fixed-algorithm draws. std::mt19937_64 has a
// portable bit stream; the distribution algorithms here are pinned so that
// draws are reproducible across standard libraries too.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive range {lo, ..., hi}
  int randint(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // Box-Muller, always consumes two uniforms
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // independent substream derived from a stream id
  Rng fork(uint64_t stream) {
    uint64_t s = next_u64() ^ (stream * 0x9e3779b97f4a7c15ull + 0xbf58476d1ce4e5b9ull);
    return Rng(s);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace moco
