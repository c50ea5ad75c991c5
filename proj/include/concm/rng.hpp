#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <utility>

namespace concm {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Combine a seed with any number of stream tags into a new seed.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  return splitmix64(seed ^ splitmix64(tag + 0x632BE59BD9B4E019ull));
}

template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Tags... rest) noexcept {
  return derive_seed(derive_seed(seed, tag), static_cast<std::uint64_t>(rest)...);
}

/// Counter-based generator: output n is a pure function of (key, n), so
/// streams are reproducible on every platform and trivially partitioned.
/// Distributions are implemented here rather than via <random> because the
/// standard distributions are not specified bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(derive_seed(seed, stream)) {}

  std::uint64_t next_u64() noexcept {
    return splitmix64(key_ ^ splitmix64(counter_++ * 0xD1B54A32D192ED03ull));
  }

  /// Uniform in the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::size_t below(std::size_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % bound + 1) % bound;
    std::uint64_t r;
    do { r = next_u64(); } while (r > limit);
    return static_cast<std::size_t>(r % bound);
  }

  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() noexcept {
    if (spare_) {
      double v = *spare_;
      spare_.reset();
      return v;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::optional<double> spare_;
};

}  // namespace concm
