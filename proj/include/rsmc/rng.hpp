#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>

#include "rsmc/types.hpp"

namespace rsmc {

// Counter-based pseudorandom stream (splitmix64). Streams are derived by
// hashing a root seed with stream tags, so batched rollouts can draw from
// independent substreams keyed by (epoch, particle) and results do not
// depend on scheduling order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  static std::uint64_t key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                           std::uint64_t c = 0) {
    std::uint64_t k = mix(seed + 0x9e3779b97f4a7c15ull);
    k = mix(k ^ (a + 0xbf58476d1ce4e5b9ull));
    k = mix(k ^ (b + 0x94d049bb133111ebull));
    k = mix(k ^ (c + 0xd6e8feb86659fd93ull));
    return k;
  }

  Rng substream(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
    return Rng(key(state_, a, b, c));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform on (0,1): never returns 0 or 1 exactly.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes two uniforms per draw so the
  // stream layout is independent of how draws interleave.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Vec normal_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Mat normal_mat(Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal();
    return m;
  }

  // Integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  std::uint64_t state() const { return state_; }

 private:
  explicit Rng(std::uint64_t raw, int) : state_(raw) {}

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace rsmc
