// Ground-state model families: configuration set generators, the large-beta
// proxy built on psi_S at t = 1, and brute-force oracles.
#pragma once

#include "sfl/ensemble.hpp"
#include "sfl/environment.hpp"
#include "sfl/errors.hpp"
#include "sfl/estimate.hpp"
#include "sfl/nested_estimator.hpp"
#include "sfl/rng.hpp"
#include "sfl/sample_tree.hpp"
#include "sfl/schedule.hpp"
#include "sfl/settings.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sfl {

enum class Family {
  HopfieldPositive,
  HopfieldNegative,
  LittlePositive,
  LittleNegative,
  SphericalPerceptron,
  BinaryPerceptron
};

inline const char* to_string(Family f) {
  switch (f) {
    case Family::HopfieldPositive: return "hopfield-positive";
    case Family::HopfieldNegative: return "hopfield-negative";
    case Family::LittlePositive: return "little-positive";
    case Family::LittleNegative: return "little-negative";
    case Family::SphericalPerceptron: return "spherical-perceptron";
    case Family::BinaryPerceptron: return "binary-perceptron";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  for (auto f : {Family::HopfieldPositive, Family::HopfieldNegative, Family::LittlePositive, Family::LittleNegative,
                 Family::SphericalPerceptron, Family::BinaryPerceptron})
    if (s == to_string(f)) return f;
  throw ArgumentError("unknown model family '" + s + "'");
}

struct ModelSpec {
  Family family = Family::HopfieldPositive;
  std::size_t n = 1;
  std::size_t m = 1;
  std::size_t sphere_samples = 64;  // rows of each sampled sphere side
  std::uint64_t seed = 1;           // seed of the sphere samples
  std::size_t hypercube_cap = 14;   // largest n with 2^n enumerated rows
};

/// +1 for max-type families, -1 for min-max families.
inline double model_sign(Family f) {
  return (f == Family::HopfieldPositive || f == Family::LittlePositive) ? 1.0 : -1.0;
}

/// All 2^n vertices of {-1/sqrt(n), 1/sqrt(n)}^n; bit i of the row index
/// selects the sign of coordinate i.
inline Matrix hypercube(std::size_t n, std::size_t cap = 14) {
  if (n < 1) throw DimensionError("hypercube dimension must be positive");
  if (n > cap) {
    std::ostringstream os;
    os << "hypercube dimension " << n << " exceeds the enumeration cap " << cap;
    throw ArgumentError(os.str());
  }
  const std::size_t rows = std::size_t{1} << n;
  const double v = 1.0 / std::sqrt(static_cast<double>(n));
  Matrix x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < n; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ((i >> j) & 1U) ? -v : v;
  return x;
}

/// Unit vectors: the axis directions (both signs unless `orthant`) followed by
/// normalized Gaussian samples (absolute values when `orthant`), with exact
/// duplicates removed.
inline Matrix sphere_samples(std::size_t dim, std::size_t count, std::uint64_t seed, bool orthant) {
  if (dim < 1) throw DimensionError("sphere dimension must be positive");
  std::vector<std::vector<double>> rows;
  std::set<std::vector<double>> seen;
  auto push = [&](std::vector<double> r) {
    if (seen.insert(r).second) rows.push_back(std::move(r));
  };
  for (std::size_t j = 0; j < dim; ++j) {
    std::vector<double> e(dim, 0.0);
    e[j] = 1.0;
    push(e);
    if (!orthant) {
      e[j] = -1.0;
      push(e);
    }
  }
  const auto base = rng::combine(rng::combine(0x7e11ULL, seed), dim);
  for (std::size_t i = 0; rows.size() < count && i < 64 * count + 64; ++i) {
    const auto key = rng::component_key(base, i, rng::Component::Sphere);
    std::vector<double> v(dim);
    double norm = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      v[j] = rng::normal(key, j);
      if (orthant) v[j] = std::abs(v[j]);
      norm += v[j] * v[j];
    }
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) continue;
    for (auto& c : v) c /= norm;
    push(std::move(v));
  }
  return ConfigurationSets::from_rows(rows, orthant ? "orthant samples" : "sphere samples");
}

inline ConfigurationSets generate_sets(const ModelSpec& spec) {
  if (spec.n < 1 || spec.m < 1) throw DimensionError("model dimensions must be positive");
  switch (spec.family) {
    case Family::HopfieldPositive:
    case Family::HopfieldNegative:
      return ConfigurationSets::build(hypercube(spec.n, spec.hypercube_cap),
                                      sphere_samples(spec.m, spec.sphere_samples, spec.seed, false));
    case Family::LittlePositive:
    case Family::LittleNegative:
      return ConfigurationSets::build(hypercube(spec.n, spec.hypercube_cap), hypercube(spec.m, spec.hypercube_cap));
    case Family::SphericalPerceptron:
      return ConfigurationSets::build(sphere_samples(spec.n, spec.sphere_samples, spec.seed ^ 0x5bULL, false),
                                      sphere_samples(spec.m, spec.sphere_samples, spec.seed, true));
    case Family::BinaryPerceptron:
      return ConfigurationSets::build(hypercube(spec.n, spec.hypercube_cap),
                                      sphere_samples(spec.m, spec.sphere_samples, spec.seed, true));
  }
  throw ArgumentError("unknown model family");
}

struct ProxyResult {
  Estimate value;                   // extrapolated ground-state value
  std::vector<double> betas;
  std::vector<Estimate> ladder;     // sign(s) psi_S(t = 1) per beta
};

// Starts at 16 sqrt(n): densely sampled sphere sides add a log(beta)/beta
// term that a linear fit in 1/beta only tolerates once beta is large.
inline std::vector<double> default_beta_ladder(std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  return {16.0 * sn, 32.0 * sn, 64.0 * sn, 128.0 * sn, 256.0 * sn};
}

/// psi_S at t = 1 along a beta ladder, extrapolated linearly in 1/beta per
/// outer draw (common G across the ladder). Returns sign(s) times the
/// intercept, i.e. the max (s = +1) or min-max (s = -1) ground state.
inline ProxyResult ground_state_proxy(const ModelSpec& spec, const LiftingSchedule& sch, const EvalSettings& st_in,
                                      std::vector<double> betas = {}) {
  const auto sets = generate_sets(spec);
  if (!is_unit_norm(sets).both()) throw ArgumentError("ground_state_proxy requires unit-norm sets");
  if (betas.empty()) betas = default_beta_ladder(spec.n);
  if (betas.size() < 2) throw ArgumentError("beta ladder needs at least two values");
  EvalSettings st = st_in;
  st.t = 1.0;
  st.s = model_sign(spec.family);
  const double sg = sign_of(st.s);
  ProxyResult out;
  out.betas = betas;
  std::vector<std::vector<double>> vals;
  for (double b : betas) {
    st.beta = b;
    auto v = psi_s_per_draw(sets, sch, st);
    for (auto& x : v) x *= sg;
    out.ladder.push_back(jackknife_mean(v));
    vals.push_back(std::move(v));
  }
  const std::size_t nb = betas.size();
  double xbar = 0.0;
  for (double b : betas) xbar += 1.0 / b;
  xbar /= static_cast<double>(nb);
  double sxx = 0.0;
  for (double b : betas) sxx += (1.0 / b - xbar) * (1.0 / b - xbar);
  // Intercept = sum_j c_j y_j with c_j = 1/nb - xbar (x_j - xbar) / sxx.
  std::vector<double> coef(nb);
  for (std::size_t j = 0; j < nb; ++j) coef[j] = 1.0 / static_cast<double>(nb) - xbar * (1.0 / betas[j] - xbar) / sxx;
  std::vector<double> icpt(vals.front().size(), 0.0);
  for (std::size_t i = 0; i < icpt.size(); ++i)
    for (std::size_t j = 0; j < nb; ++j) icpt[i] += coef[j] * vals[j][i];
  out.value = jackknife_mean(icpt);
  return out;
}

/// max over the unit vectors y >= 0 of y^T v: ||v_+|| when some v_j > 0,
/// otherwise max_j v_j (attained on an axis).
inline double orthant_max(const Vector& v) {
  const double mx = v.maxCoeff();
  if (mx <= 0.0) return mx;
  return v.cwiseMax(0.0).norm();
}

namespace detail {

inline double sphere_min(const Matrix& g, std::size_t n) {
  auto f = [&](const Vector& x) { return orthant_max(g * x); };
  if (n == 1) {
    Vector a(1), b(1);
    a << 1.0;
    b << -1.0;
    return std::min(f(a), f(b));
  }
  if (n == 2) {
    auto fa = [&](double th) {
      Vector x(2);
      x << std::cos(th), std::sin(th);
      return f(x);
    };
    const std::size_t grid = 3600;
    double best = std::numeric_limits<double>::infinity(), arg = 0.0;
    for (std::size_t i = 0; i < grid; ++i) {
      const double th = 2.0 * std::numbers::pi * static_cast<double>(i) / grid;
      const double v = fa(th);
      if (v < best) best = v, arg = th;
    }
    double lo = arg - 2.0 * std::numbers::pi / grid, hi = arg + 2.0 * std::numbers::pi / grid;
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 80; ++it) {
      const double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
      if (fa(a) < fa(b)) hi = b; else lo = a;
    }
    return std::min(best, fa(0.5 * (lo + hi)));
  }
  if (n == 3) {
    auto fs = [&](double th, double ph) {
      Vector x(3);
      x << std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th);
      return f(x);
    };
    const std::size_t nt = 180, np = 360;
    double best = std::numeric_limits<double>::infinity(), bt = 0.0, bp = 0.0;
    for (std::size_t i = 0; i <= nt; ++i) {
      const double th = std::numbers::pi * static_cast<double>(i) / nt;
      for (std::size_t j = 0; j < np; ++j) {
        const double ph = 2.0 * std::numbers::pi * static_cast<double>(j) / np;
        const double v = fs(th, ph);
        if (v < best) best = v, bt = th, bp = ph;
      }
    }
    double step = std::numbers::pi / nt;
    while (step > 1e-10) {
      bool moved = false;
      for (auto [dt, dp] : {std::pair{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}}) {
        const double v = fs(bt + dt * step, bp + dp * step);
        if (v < best) {
          best = v;
          bt += dt * step;
          bp += dp * step;
          moved = true;
        }
      }
      if (!moved) step *= 0.5;
    }
    return best;
  }
  throw ArgumentError("spherical-perceptron oracle supports n <= 3");
}

inline double oracle_value(const ModelSpec& spec, const Matrix& g, const Matrix& cube) {
  const double sn = std::sqrt(static_cast<double>(spec.n));
  const double sm = std::sqrt(static_cast<double>(spec.m));
  switch (spec.family) {
    case Family::HopfieldPositive:
    case Family::HopfieldNegative:
    case Family::LittlePositive:
    case Family::LittleNegative:
    case Family::BinaryPerceptron: {
      const bool maximize = spec.family == Family::HopfieldPositive || spec.family == Family::LittlePositive;
      double best = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < cube.rows(); ++i) {
        const Vector v = g * cube.row(i).transpose();
        double inner = 0.0;
        if (spec.family == Family::HopfieldPositive || spec.family == Family::HopfieldNegative)
          inner = v.norm();
        else if (spec.family == Family::BinaryPerceptron)
          inner = orthant_max(v);
        else
          inner = v.lpNorm<1>() / sm;
        best = maximize ? std::max(best, inner) : std::min(best, inner);
      }
      return best / sn;
    }
    case Family::SphericalPerceptron:
      return sphere_min(g, spec.n) / sn;
  }
  return 0.0;
}

}  // namespace detail

/// Monte Carlo over G of the exact inner optimization. G for outer draw i is
/// the same matrix the sample tree uses for outer draw i under `seed`.
inline Estimate brute_force_oracle(const ModelSpec& spec, std::size_t n_outer, std::uint64_t seed,
                                   std::size_t threads = 0) {
  if (n_outer < 2) throw ArgumentError("oracle needs at least two outer draws");
  if (spec.family == Family::SphericalPerceptron && spec.n > 3)
    throw ArgumentError("spherical-perceptron oracle supports n <= 3");
  Matrix cube;
  if (spec.family != Family::SphericalPerceptron) cube = hypercube(spec.n, spec.hypercube_cap);
  if (spec.family == Family::LittlePositive || spec.family == Family::LittleNegative)
    (void)hypercube(spec.m, spec.hypercube_cap);  // same cap applies to the y side
  std::vector<double> v(n_outer);
  parallel_for(n_outer, threads, [&](std::size_t i) {
    const Matrix g = detail::draw_g(rng::root_key(seed, i), spec.n, spec.m);
    v[i] = detail::oracle_value(spec, g, cube);
  });
  return jackknife_mean(v);
}

}  // namespace sfl
