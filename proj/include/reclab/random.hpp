#pragma once

#include <cstdint>
#include <mutex>
#include <random>

namespace reclab {

// Seedable 64-bit generator. std::mt19937_64's output sequence is fixed by the
// standard, and the conversions below avoid the implementation-defined
// <random> distributions, so a seed replays identically on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform01() { return double(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in [0, bound). bound must be > 0. Rejection sampling removes bias.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

// Derives independent child seeds from one master seed (SplitMix64).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t random_seed() {
  std::random_device rd;
  return (std::uint64_t(rd()) << 32) ^ rd();
}

// Rng guarded by a mutex so that many request handlers can share one stream.
// With a single caller the draw sequence is exactly that of the seed.
class SharedRng {
 public:
  explicit SharedRng(std::uint64_t seed) : rng_(seed) {}

  template <typename F>
  decltype(auto) with(F&& f) {
    std::lock_guard lock(mutex_);
    return f(rng_);
  }

 private:
  std::mutex mutex_;
  Rng rng_;
};

}  // namespace reclab
