#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace aigen {

namespace detail {
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view text,
                                     std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}
}  // namespace detail

/// Counter-based random stream: output i is a pure function of (key, i), so a
/// stream can be saved as two integers and any substream derived without
/// touching the parent. Distributions are implemented here rather than taken
/// from <random>, whose distributions differ across standard libraries.
class RandomStream {
 public:
  RandomStream() = default;
  explicit RandomStream(std::uint64_t key, std::uint64_t counter = 0)
      : key_(detail::mix64(key ^ 0x6a09e667f3bcc909ULL)), counter_(counter) {}

  static RandomStream from_state(std::uint64_t key, std::uint64_t counter) {
    RandomStream s;
    s.key_ = key;
    s.counter_ = counter;
    return s;
  }

  RandomStream substream(std::uint64_t tag) const {
    return from_state(detail::mix64(key_ ^ detail::mix64(tag + 0x9e3779b97f4a7c15ULL)), 0);
  }
  RandomStream substream(std::string_view tag) const { return substream(detail::fnv1a(tag)); }

  std::uint64_t next_u64() {
    return detail::mix64(key_ + detail::mix64(counter_++ * 0x9e3779b97f4a7c15ULL + 1));
  }

  /// Uniform in the open interval (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  friend bool operator==(const RandomStream&, const RandomStream&) = default;

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace aigen
