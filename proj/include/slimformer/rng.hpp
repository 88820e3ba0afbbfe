#ifndef SLIMFORMER_RNG_HPP
#define SLIMFORMER_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string>

namespace slimformer {

// Counter-based RNG: every draw is a pure function of (seed, stream, counter),
// so replaying a step with the same key reproduces the same values regardless
// of what was drawn before. Mixing is the splitmix64 finalizer.

inline uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline uint64_t hash_string(const std::string& s) {
  uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

struct RngKey {
  uint64_t seed = 0;
  uint64_t stream = 0;

  RngKey() = default;
  RngKey(uint64_t seed_, uint64_t stream_) : seed(seed_), stream(stream_) {}

  RngKey derive(uint64_t substream) const {
    return RngKey{seed, mix64(stream ^ mix64(substream))};
  }
  RngKey derive(const std::string& name) const { return derive(hash_string(name)); }

  uint64_t word(uint64_t counter) const {
    return mix64(mix64(mix64(seed) ^ stream) ^ counter);
  }

  // Uniform on the open interval (0, 1); never returns 0 or 1 exactly.
  double uniform_open(uint64_t counter) const {
    uint64_t w = word(counter);
    return (static_cast<double>(w >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes counters 2i and 2i+1.
  double normal(uint64_t i) const {
    double u1 = uniform_open(2 * i);
    double u2 = uniform_open(2 * i + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n). Modulo bias is irrelevant for n << 2^64.
  uint64_t uniform_int(uint64_t counter, uint64_t n) const {
    return word(counter) % n;
  }
};

}  // namespace slimformer

#endif  // SLIMFORMER_RNG_HPP
