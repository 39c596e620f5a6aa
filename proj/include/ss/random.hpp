#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ss {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream key from a parent seed and a list of indices.
template <typename... Ix>
constexpr std::uint64_t derive_seed(std::uint64_t seed, Ix... ix) noexcept {
  std::uint64_t key = splitmix64(seed);
  ((key = splitmix64(key ^ splitmix64(static_cast<std::uint64_t>(ix) + 0x632be59bd9b4e019ULL))), ...);
  return key;
}

/// Counter-based random stream: draw n is a pure function of (key, n), so a
/// trajectory's noise depends only on its key and never on scheduling.
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t key) noexcept : key_(splitmix64(key)) {}

  std::uint64_t next_u64() noexcept { return splitmix64(key_ ^ splitmix64(counter_++)); }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = n == 0 ? 0 : (~std::uint64_t{0} - n + 1) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= limit) return r % n;
    }
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename RandomIt>
void shuffle(RandomIt first, RandomIt last, Rng& rng) {
  for (auto n = last - first; n > 1; --n) {
    const auto j = static_cast<decltype(n)>(rng.below(static_cast<std::uint64_t>(n)));
    std::swap(first[n - 1], first[j]);
  }
}

}  // namespace ss
