// Counter-based keyed Gaussian generator.
//
// Every coordinate is a pure function of a 64-bit key and a coordinate index,
// so any draw can be regenerated without replaying a stream. Keys are built by
// hashing the seed, the outer sample index, the path through the sample tree,
// the level and the component.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace sfl::rng {

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Ordered combination; combine(k, a) != combine(a, k) in general.
inline constexpr std::uint64_t combine(std::uint64_t key, std::uint64_t value) {
  return mix64(key ^ mix64(value * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
}

/// Uniform on the open interval (0, 1) from the top 53 bits.
inline double to_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform(std::uint64_t key, std::uint64_t index) {
  return to_unit(combine(key, index));
}

/// Standard normal coordinate `index` of the stream `key` (Box-Muller; pair
/// index/2 supplies the cosine and sine branches).
inline double normal(std::uint64_t key, std::uint64_t index) {
  const std::uint64_t pair = index >> 1;
  const double u1 = uniform(key, 2 * pair);
  const double u2 = uniform(key, 2 * pair + 1);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return (index & 1U) ? radius * std::sin(angle) : radius * std::cos(angle);
}

template <class It>
inline void fill_normal(std::uint64_t key, It first, It last) {
  std::uint64_t i = 0;
  for (; first != last; ++first, ++i) *first = normal(key, i);
}

// Component tags for the disjoint coordinate subspaces of one tree node.
enum class Component : std::uint64_t { G = 1, U4 = 2, U2 = 3, H = 4, Sphere = 5, Misc = 6 };

inline std::uint64_t root_key(std::uint64_t seed, std::uint64_t outer) {
  return combine(combine(0x5f1a7c3e9d2b4a61ULL, seed), outer);
}

inline std::uint64_t child_key(std::uint64_t parent, std::uint64_t child) {
  return combine(parent, child + 1);
}

inline std::uint64_t component_key(std::uint64_t node, std::uint64_t level, Component c) {
  return combine(combine(node, level), static_cast<std::uint64_t>(c));
}

}  // namespace sfl::rng
