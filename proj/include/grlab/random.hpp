#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace grlab {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic random stream. Built on mt19937_64, whose output sequence is
// fixed by the standard; the distributions below are hand-rolled so results
// do not depend on the standard library implementation.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n) {
    auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  // Inverse-CDF draw from a probability vector.
  std::size_t categorical(std::span<const double> probs) {
    const double u = uniform();
    double cumulative = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      last_positive = i;
      cumulative += probs[i];
      if (u < cumulative) return i;
    }
    return last_positive;
  }

 private:
  std::mt19937_64 engine_;
};

enum class StreamPurpose : std::uint64_t {
  prompts = 1,
  rollout = 2,
  drop = 3,
  init = 4,
  check = 5,
};

// Independent stream keyed by (root seed, purpose, step, prompt, sample).
inline RandomStream substream(std::uint64_t root, StreamPurpose purpose,
                              std::uint64_t step = 0, std::uint64_t prompt = 0,
                              std::uint64_t sample = 0) {
  std::uint64_t h = mix64(root);
  h = mix64(h ^ static_cast<std::uint64_t>(purpose));
  h = mix64(h ^ step);
  h = mix64(h ^ prompt);
  h = mix64(h ^ sample);
  return RandomStream(h);
}

}  // namespace grlab
