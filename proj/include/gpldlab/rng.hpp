#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace gpldlab {

// 64-bit mix used for stream derivation and config hashing.
std::uint64_t splitmix64(std::uint64_t x);

// Deterministic random source. The engine is std::mt19937_64 (its output
// sequence is pinned by the standard); all distributions are implemented
// here by hand so that results are bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Independent stream derived from (seed, stream id).
  static Rng from_stream(std::uint64_t seed, std::uint64_t stream) {
    return Rng(splitmix64(seed * 0x9e3779b97f4a7c15ull + splitmix64(stream)));
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53 bits of precision.
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller with a cached spare.
  double normal();
  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Uniform integer in [0, n), unbiased (rejection sampling). n >= 1.
  int uniform_int(int n);

  // +1 or -1 with equal probability.
  double rademacher() { return (gen_() >> 63) ? 1.0 : -1.0; }

  // k distinct indices drawn uniformly from [0, n), ascending order.
  std::vector<int> sample_without_replacement(int n, int k);

  // Categorical draw from `probs` (need not be exactly normalized).
  int categorical(const double* probs, int n);

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gpldlab
