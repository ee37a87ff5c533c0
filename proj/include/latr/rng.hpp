#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace latr {

// Deterministic 64-bit-state PRNG (splitmix64, Steele et al. 2014).
// Every random decision in the library flows through one of these, seeded
// explicitly, so runs are reproducible byte for byte. Independent streams are
// derived by hashing a purpose string into the current state (see derive()).
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n) without modulo bias.
  uint64_t below(uint64_t n) {
    if (n <= 1) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Uniform integer in [lo, hi] inclusive.
  int64_t range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Standard normal via Box-Muller (one value per pair of draws; the sine
  // branch is discarded to keep the generator stateless beyond state_).
  double normal() {
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // New independent stream keyed by (current state, purpose). The purpose
  // string is hashed with FNV-1a 64 and xored into the state, then mixed.
  Rng derive(std::string_view purpose) const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const char c : purpose) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ull;
    }
    Rng out(state_ ^ h);
    out.next_u64();
    return out;
  }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

}  // namespace latr
