// Evaluation settings shared by every stochastic estimator.
#pragma once

#include "sfl/errors.hpp"
#include "sfl/schedule.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace sfl {

enum class EstimatorMode { MonteCarlo, GaussHermite };

inline const char* to_string(EstimatorMode m) {
  return m == EstimatorMode::MonteCarlo ? "monte-carlo" : "gauss-hermite";
}

inline EstimatorMode parse_mode(const std::string& s) {
  if (s == "monte-carlo" || s == "mc") return EstimatorMode::MonteCarlo;
  if (s == "gauss-hermite" || s == "gh") return EstimatorMode::GaussHermite;
  throw ArgumentError("unknown estimator mode '" + s + "'");
}

struct EvalSettings {
  double t = 1.0;
  double beta = 1.0;
  double s = 1.0;
  // samples[k-1] = N[k]: level k <= r is averaged over N[k] draws (or N[k]
  // quadrature nodes per dimension); samples[r] is the outer draw count.
  std::vector<std::size_t> samples;
  std::uint64_t seed = 0;
  EstimatorMode mode = EstimatorMode::MonteCarlo;
  std::size_t threads = 0;  // 0 = hardware concurrency
  double max_leaf_evaluations = 2e8;

  std::size_t outer() const { return samples.empty() ? 0 : samples.back(); }
};

inline void validate_settings(const EvalSettings& st, std::size_t r) {
  if (!(st.t >= 0.0 && st.t <= 1.0)) throw ArgumentError("t must lie in [0, 1]");
  if (!(st.beta > 0.0) || !std::isfinite(st.beta)) throw ArgumentError("beta > 0 required");
  if (st.s == 0.0 || !std::isfinite(st.s)) throw ArgumentError("s != 0 required");
  if (st.samples.size() != r + 1) {
    std::ostringstream os;
    os << "samples must list N[1..r+1] (" << r + 1 << " entries), got " << st.samples.size();
    throw ArgumentError(os.str());
  }
  for (std::size_t k = 0; k < st.samples.size(); ++k) {
    if (st.samples[k] < 2) {
      std::ostringstream os;
      os << "N[" << k + 1 << "] >= 2 required";
      throw ArgumentError(os.str());
    }
  }
}

inline double sign_of(double s) { return s > 0.0 ? 1.0 : -1.0; }

/// |s| beta / (2 sqrt(n)), the common prefactor of every derivative formula.
inline double derivative_prefactor(const EvalSettings& st, std::size_t n) {
  return std::abs(st.s) * st.beta / (2.0 * std::sqrt(static_cast<double>(n)));
}

}  // namespace sfl
