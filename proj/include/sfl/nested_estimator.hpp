// Monte Carlo estimators of psi, psi1 and psi_S built on the sample tree.
#pragma once

#include "sfl/ensemble.hpp"
#include "sfl/errors.hpp"
#include "sfl/estimate.hpp"
#include "sfl/hamiltonian.hpp"
#include "sfl/sample_tree.hpp"
#include "sfl/schedule.hpp"
#include "sfl/settings.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace sfl {

/// Nested log-average over a flattened tree of log Z values.
///
/// leaf_log_z is laid out row-major over (j_r, ..., j_1), j_k < counts[k-1].
/// Level k collapses groups of counts[k-1] consecutive entries with
///   log zeta_k = LSE_j((m[k]/m[k-1]) log zeta_{k-1,j}) - log N[k].
/// Returns log zeta_r.
inline double zeta_ladder(std::span<const double> leaf_log_z, const LiftingSchedule& sch,
                          std::span<const std::size_t> counts) {
  require_valid(sch);
  if (counts.size() != sch.r) throw ArgumentError("zeta_ladder: need one count per level 1..r");
  std::size_t expected = 1;
  for (auto c : counts) {
    if (c < 1) throw ArgumentError("zeta_ladder: counts must be positive");
    expected *= c;
  }
  if (leaf_log_z.size() != expected) throw DimensionError("zeta_ladder: leaf count does not match counts");
  std::vector<double> cur(leaf_log_z.begin(), leaf_log_z.end());
  for (std::size_t k = 1; k <= sch.r; ++k) {
    const std::size_t nk = counts[k - 1];
    const double ratio = sch.m[k] / sch.m[k - 1];
    std::vector<double> next(cur.size() / nk);
    for (std::size_t g = 0; g < next.size(); ++g) {
      Eigen::Map<const Eigen::VectorXd> block(cur.data() + g * nk, static_cast<Eigen::Index>(nk));
      next[g] = logsumexp(ratio * block) - std::log(static_cast<double>(nk));
    }
    cur = std::move(next);
  }
  return cur.front();
}

/// 1 / (beta |s| sqrt(n) m_r)
inline double psi_scale(const LiftingSchedule& sch, const EvalSettings& st, std::size_t n) {
  return 1.0 / (st.beta * std::abs(st.s) * std::sqrt(static_cast<double>(n)) * sch.m[sch.r]);
}

inline std::vector<double> psi_per_draw(const TreeResults& tree, const LiftingSchedule& sch, const EvalSettings& st,
                                        std::size_t n) {
  const double scale = psi_scale(sch, st, n);
  std::vector<double> v(tree.draws.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = tree.draws[i].log_zeta * scale;
  return v;
}

/// Per-draw psi1 from a tree evaluated with basic_request().
inline std::vector<double> psi1_per_draw(const TreeResults& tree, const LiftingSchedule& sch,
                                         const EvalSettings& st, std::size_t n) {
  auto v = psi_per_draw(tree, sch, st, n);
  const double pref = derivative_prefactor(st, n);
  for (std::size_t i = 0; i < v.size(); ++i) {
    double corr = 0.0;
    // k = r+1 carries m_{r+1} = 0 and is omitted.
    for (std::size_t k = 1; k <= sch.r; ++k) {
      const double here = sch.p[k - 1] * sch.q[k - 1] * tree.replica(i, k - 1, kNormProduct);
      const double next = sch.p[k] * sch.q[k] * tree.replica(i, k, kNormProduct);
      corr += (here - next) * sch.m[k];
    }
    v[i] -= pref * corr;
  }
  return v;
}

inline Estimate eval_psi(const ConfigurationSets& sets, const LiftingSchedule& sch, const EvalSettings& st) {
  TreeRequest req;
  const auto tree = run_tree(sets, sch, st, req);
  return jackknife_mean(psi_per_draw(tree, sch, st, sets.n()));
}

/// The S-variant: D0 without the sqrt(t) ||x|| ||y|| sum a_k u4[k] term.
inline std::vector<double> psi_s_per_draw(const ConfigurationSets& sets, const LiftingSchedule& sch,
                                          const EvalSettings& st) {
  TreeRequest req;
  req.include_a = false;
  return psi_per_draw(run_tree(sets, sch, st, req), sch, st, sets.n());
}

inline Estimate eval_psi_s(const ConfigurationSets& sets, const LiftingSchedule& sch, const EvalSettings& st) {
  return jackknife_mean(psi_s_per_draw(sets, sch, st));
}

inline Estimate eval_psi1(const ConfigurationSets& sets, const LiftingSchedule& sch, const EvalSettings& st) {
  const auto tree = run_tree(sets, sch, st, basic_request(sets));
  return jackknife_mean(psi1_per_draw(tree, sch, st, sets.n()));
}

/// Exact psi for a single pair (lx = ly = 1). Each level k <= r contributes
/// its lognormal second moment m_k sigma_k^2; G and level r+1 enter linearly
/// and average out.
inline double closed_form_single_pair(const LiftingSchedule& sch, const EvalSettings& st, double xnorm,
                                      double ynorm, std::size_t n, bool include_a = true) {
  const auto c = derived_coefficients(sch);
  check_beta_s(st.beta, st.s);
  if (!(st.t >= 0.0 && st.t <= 1.0)) throw ArgumentError("t must lie in [0, 1]");
  const double t = st.t;
  double sum = 0.0;
  for (std::size_t k = 1; k <= sch.r; ++k) {
    const double a2 = include_a ? c.a[k] * c.a[k] : 0.0;
    sum += sch.m[k] * (t * a2 + (1.0 - t) * (c.b[k] * c.b[k] + c.c[k] * c.c[k]));
  }
  const double norms = xnorm * xnorm * ynorm * ynorm;
  return derivative_prefactor(st, n) * norms * sum;
}

inline double closed_form_single_pair(const ConfigurationSets& sets, const LiftingSchedule& sch,
                                      const EvalSettings& st, bool include_a = true) {
  if (sets.lx() * sets.ly() != 1) throw DimensionError("closed_form_single_pair needs lx = ly = 1");
  return closed_form_single_pair(sch, st, sets.overlaps().xnorm(0), sets.overlaps().ynorm(0), sets.n(), include_a);
}

}  // namespace sfl
