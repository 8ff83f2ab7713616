#pragma once

// Reproducible random streams for parallel Monte Carlo. Substreams are
// derived from a master seed and an integer path (e.g. {method, level_x,
// level_t, replicate}) through a splitmix64-based combiner, so tasks can run
// on any thread in any order and still draw identical numbers.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace mismc2 {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
  return splitmix64(seed ^ (splitmix64(value) + 0x9E3779B97F4A7C15ull + (seed << 6) + (seed >> 2)));
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : engine_(key) {}

  double gauss() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }  // [0, 1)
  double gamma(double shape, double scale) {
    std::gamma_distribution<double> g(shape, scale);
    return g(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline std::uint64_t derive_key(std::uint64_t master, std::span<const std::uint64_t> path) {
  std::uint64_t h = splitmix64(master);
  for (std::uint64_t c : path) h = hash_combine(h, c);
  return h;
}

/// Deterministic substream for a (master seed, path) pair; the empty path
/// yields the master stream itself.
inline RngStream seed_stream(std::uint64_t master, std::span<const std::uint64_t> path) {
  return RngStream(derive_key(master, path));
}

inline RngStream seed_stream(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return seed_stream(master, std::span<const std::uint64_t>(path.begin(), path.size()));
}

}  // namespace mismc2
