#pragma once

#include <cstdint>

#include <boost/math/distributions/normal.hpp>

namespace extrema_gp {

namespace detail {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Stateless counter-based generator: every draw is a pure function of
/// (seed, stream, index), so results do not depend on execution order.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(detail::mix64(detail::mix64(seed + 0x9e3779b97f4a7c15ULL) ^ (stream * 0xd1b54a32d192ed03ULL + 1))) {}

  constexpr std::uint64_t bits(std::uint64_t index) const noexcept {
    return detail::mix64(key_ ^ detail::mix64(index + 0x632be59bd9b4e019ULL));
  }

  /// Uniform on the open interval (0, 1).
  constexpr double uniform(std::uint64_t index) const noexcept {
    return (static_cast<double>(bits(index) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by inversion.
  double normal(std::uint64_t index) const {
    static const boost::math::normal_distribution<double> standard;
    return boost::math::quantile(standard, uniform(index));
  }

 private:
  std::uint64_t key_;
};

}  // namespace extrema_gp
