// Joint Gaussian draws: the coupling matrix G and the per-level blocks
// U_k = {u4[k], u2[k], h[k]}.
#pragma once

#include "sfl/ensemble.hpp"
#include "sfl/errors.hpp"
#include "sfl/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace sfl {

struct GaussianEnvironment {
  Matrix G;                  // m x n
  std::vector<double> u4;    // index 1..r+1
  std::vector<Vector> u2;    // index 1..r+1, each of length m
  std::vector<Vector> h;     // index 1..r+1, each of length n
  std::uint64_t seed = 0;
  std::uint64_t index = 0;

  std::size_t levels() const { return u4.empty() ? 0 : u4.size() - 1; }
};

namespace detail {

inline Matrix draw_g(std::uint64_t root, std::size_t n, std::size_t m) {
  Matrix g(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const auto key = rng::component_key(root, 0, rng::Component::G);
  rng::fill_normal(key, g.data(), g.data() + g.size());
  return g;
}

inline double draw_u4(std::uint64_t node, std::size_t level) {
  return rng::normal(rng::component_key(node, level, rng::Component::U4), 0);
}

inline Vector draw_vector(std::uint64_t node, std::size_t level, rng::Component c, std::size_t len) {
  Vector v(static_cast<Eigen::Index>(len));
  rng::fill_normal(rng::component_key(node, level, c), v.data(), v.data() + v.size());
  return v;
}

/// Key of the level-k node reached by following child 0 from the root at
/// every level r, r-1, ..., k.
inline std::uint64_t first_path_key(std::uint64_t root, std::size_t r, std::size_t k) {
  std::uint64_t key = root;
  for (std::size_t level = r; level >= k && level >= 1; --level) key = rng::child_key(key, 0);
  return key;
}

}  // namespace detail

/// One joint draw. Level r+1 and G belong to the outer sample `index`; level
/// k <= r is the first node of its level on the sample tree of that outer
/// sample, so the same coordinates appear in nested estimates.
inline GaussianEnvironment sample_environment(std::size_t n, std::size_t m, std::size_t r,
                                              std::uint64_t seed, std::uint64_t index) {
  if (r < 1) throw ArgumentError("sample_environment: r >= 1 required");
  if (n < 1 || m < 1) throw DimensionError("sample_environment: n, m >= 1 required");
  GaussianEnvironment env;
  env.seed = seed;
  env.index = index;
  const auto root = rng::root_key(seed, index);
  env.G = detail::draw_g(root, n, m);
  env.u4.assign(r + 2, 0.0);
  env.u2.assign(r + 2, Vector());
  env.h.assign(r + 2, Vector());
  for (std::size_t k = 1; k <= r + 1; ++k) {
    const auto node = k == r + 1 ? root : detail::first_path_key(root, r, k);
    env.u4[k] = detail::draw_u4(node, k);
    env.u2[k] = detail::draw_vector(node, k, rng::Component::U2, m);
    env.h[k] = detail::draw_vector(node, k, rng::Component::H, n);
  }
  return env;
}

}  // namespace sfl
