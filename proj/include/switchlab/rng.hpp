#ifndef SWITCHLAB_RNG_HPP
#define SWITCHLAB_RNG_HPP

#include <cstdint>
#include <initializer_list>

#include "switchlab/numerics.hpp"

// Counter-based random streams. Every draw is a pure function of
// (key, counter), so results are independent of evaluation order and
// thread scheduling. Keys are derived by hashing the master seed together
// with arbitrary index words (stream id, grid index, unit, period, ...).

namespace switchlab {

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Hash an arbitrary list of 64-bit words into a stream key.
inline std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t h = detail::mix64(seed);
  for (std::uint64_t w : ids) h = detail::mix64(h ^ detail::mix64(w));
  return h;
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(key) {}

  static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    return RngStream(derive_key(seed, ids));
  }

  std::uint64_t next_u64() { return detail::mix64(key_ ^ detail::mix64(counter_++)); }

  /// Uniform on (0,1), endpoints excluded.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double next_normal() { return normal_quantile(next_uniform()); }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Stateless keyed draws: the value at (seed, stream, i, t, k) never depends
// on what else was drawn. Used to freeze population ingredients.
inline double keyed_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t i,
                            std::uint64_t t, std::uint64_t k = 0) {
  std::uint64_t h = derive_key(seed, {stream, i, t, k});
  return (static_cast<double>(h >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

inline double keyed_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t i,
                           std::uint64_t t, std::uint64_t k = 0) {
  return normal_quantile(keyed_uniform(seed, stream, i, t, k));
}

inline bool keyed_bernoulli(std::uint64_t seed, std::uint64_t stream, std::uint64_t i,
                            std::uint64_t t, double p, std::uint64_t k = 0) {
  return keyed_uniform(seed, stream, i, t, k) < p;
}

}  // namespace switchlab

#endif  // SWITCHLAB_RNG_HPP
