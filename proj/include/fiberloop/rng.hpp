#ifndef FIBERLOOP_RNG_HPP_
#define FIBERLOOP_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <string_view>

namespace fiberloop {

// Deterministic 64-bit generator (splitmix64 core). Hand-rolled so that
// sampled sequences do not depend on the standard library implementation;
// the reproducibility contract is seed -> identical stream on a platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_index(uint64_t n) {
    // Multiply-shift; bias is ~n/2^64, irrelevant at our dataset sizes.
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller, one cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream seed from a root seed and a stream name, so
// dataset generation, each env instance, and evaluation draw from unrelated
// sequences while staying reproducible from the single root seed.
inline uint64_t stream_seed(uint64_t root, std::string_view name) {
  uint64_t h = 0xCBF29CE484222325ull ^ root;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  // One splitmix round to decorrelate nearby roots.
  h += 0x9E3779B97F4A7C15ull;
  h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ull;
  h = (h ^ (h >> 27)) * 0x94D049BB133111EBull;
  return h ^ (h >> 31);
}

inline uint64_t stream_seed(uint64_t root, std::string_view name, uint64_t k) {
  uint64_t h = stream_seed(root, name);
  h ^= 0x9E3779B97F4A7C15ull * (k + 1);
  h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ull;
  h = (h ^ (h >> 27)) * 0x94D049BB133111EBull;
  return h ^ (h >> 31);
}

}  // namespace fiberloop

#endif  // FIBERLOOP_RNG_HPP_
