#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace laat {

// splitmix64 finalizer; used to derive independent sub-seeds from one root.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(mix64(a) ^ b); }

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seeded generator. All randomness in a run fans out from one root seed
// through named substreams, so every component draws from its own stream
// and runs reproduce bit-identically.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

  // Substream derived from this stream's seed and a tag; independent of
  // how much the parent has already been consumed.
  Rng substream(std::string_view tag) const {
    return Rng(mix64(seed_, fnv1a64(tag)));
  }
  Rng substream(std::string_view tag, uint64_t index) const {
    return Rng(mix64(mix64(seed_, fnv1a64(tag)), index));
  }

  uint64_t seed() const { return seed_; }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double uniform01() { return uniform(0.0, 1.0); }

  // Inclusive bounds.
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace laat
