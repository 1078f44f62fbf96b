#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace uagdet {

namespace detail {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Counter-based random stream. Draw k of a stream is a pure function of
/// (seed, fork path, k), so results do not depend on evaluation order or
/// threading. Uses only integer hashing plus <cmath> for the normal transform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : key_(detail::mix64(seed ^ 0x5EEDULL)) {}

  /// Independent sub-stream for a purpose tag and/or index.
  RngStream fork(std::uint64_t tag) const { return RngStream(key_, tag); }
  RngStream fork(std::string_view tag) const { return fork(detail::hash_tag(tag)); }
  RngStream fork(std::string_view tag, std::uint64_t index) const {
    return fork(detail::hash_tag(tag)).fork(index);
  }

  std::uint64_t next_u64() { return detail::mix64(key_ ^ detail::mix64(counter_++)); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1ULL;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; consumes two draws.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t position() const { return counter_; }

 private:
  RngStream(std::uint64_t parent_key, std::uint64_t tag)
      : key_(detail::mix64(parent_key ^ detail::mix64(tag ^ 0xF0F0F0F0ULL))) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace uagdet
