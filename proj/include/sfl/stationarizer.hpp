// Stationarization of psi1 along the interpolating path.
//
// Unknowns per level k1 = 1..r: p_k1, q_k1 and (complete frame) m_k1.
//   p-equation: q_k1 <norm product> - <y-overlap> = 0 on gamma_{k1+1}
//   q-equation: p_k1 <norm product> - <x-overlap> = 0 on gamma_{k1+1}
//   m-equation: projected d psi1 / d m_k1 = 0 on the box [m_lo, 1]
// Residuals are the raw brackets (without the (1-t)(m_k1 - m_k1+1) factor);
// the m residual is the finite-difference gradient divided by |s| beta / (2 sqrt n).
#pragma once

#include "sfl/ensemble.hpp"
#include "sfl/errors.hpp"
#include "sfl/estimate.hpp"
#include "sfl/lift_calculus.hpp"
#include "sfl/nested_estimator.hpp"
#include "sfl/rng.hpp"
#include "sfl/sample_tree.hpp"
#include "sfl/schedule.hpp"
#include "sfl/settings.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace sfl {

struct SolverOptions {
  double tol = 1e-3;
  std::size_t max_iter = 200;
  double damping = 0.5;
  std::size_t random_starts = 3;
  bool t0_warm_start = true;
  double m_lower = 0.05;
  double m_step = 1e-3;         // finite-difference step for the m-equation
  double m_max_move = 0.25;     // cap on one m update
  double jump_threshold = 0.25; // path_scan branch-switch flag
  std::uint64_t start_seed = 0x51a7;
  std::function<void(const std::string&)> trace;  // per-iteration records when set
};

struct StationaryPoint {
  double t = 0.0;
  LiftingSchedule schedule;
  std::vector<std::string> names;     // residual labels, e.g. "p[1]"
  std::vector<double> residuals;
  std::vector<double> residual_se;
  std::size_t iterations = 0;
  bool converged = false;
  std::string start;                  // which start produced this point

  double max_residual() const {
    double mx = 0.0;
    for (double r : residuals) mx = std::max(mx, std::abs(r));
    return mx;
  }
};

/// Pool-adjacent-violators projection onto upper >= v[0] >= v[1] >= ... >= 0
/// in least squares.
inline std::vector<double> project_monotone(const std::vector<double>& v, double upper) {
  struct Block {
    double sum;
    std::size_t count;
    double mean() const { return sum / static_cast<double>(count); }
  };
  std::vector<Block> blocks;
  for (double x : v) {
    blocks.push_back({x, 1});
    // Non-increasing target: merge while a later block exceeds an earlier one.
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() < blocks.back().mean()) {
      auto b = blocks.back();
      blocks.pop_back();
      blocks.back().sum += b.sum;
      blocks.back().count += b.count;
    }
  }
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& b : blocks)
    for (std::size_t i = 0; i < b.count; ++i) out.push_back(std::clamp(b.mean(), 0.0, upper));
  return out;
}

/// Projects the inner entries p[1..r], q[1..r] of a schedule onto the chains
/// and m[1..r] onto [m_lower, 1].
inline void project_schedule(LiftingSchedule& sch, double m_lower) {
  const std::size_t r = sch.r;
  auto project = [&](std::vector<double>& v) {
    std::vector<double> inner(v.begin() + 1, v.begin() + 1 + static_cast<std::ptrdiff_t>(r));
    inner = project_monotone(inner, v[0]);
    std::copy(inner.begin(), inner.end(), v.begin() + 1);
  };
  project(sch.p);
  project(sch.q);
  for (std::size_t k = 1; k <= r; ++k) sch.m[k] = std::clamp(sch.m[k], m_lower, 1.0);
}

namespace detail {

struct ResidualEval {
  std::vector<double> p_target;  // <x-overlap>/<norm product>, fixed point of p
  std::vector<double> q_target;  // <y-overlap>/<norm product>, fixed point of q
  std::vector<double> grad;      // d psi1 / d m_k (unscaled)
  std::vector<double> curv;      // second difference in m_k
  StationaryPoint point;
};

inline ResidualEval evaluate_residuals(const ConfigurationSets& sets, const LiftingSchedule& sch,
                                       const EvalSettings& st, bool solve_m, const SolverOptions& opt) {
  const std::size_t r = sch.r;
  ResidualEval ev;
  ev.p_target.assign(r + 1, 0.0);
  ev.q_target.assign(r + 1, 0.0);
  ev.grad.assign(r + 1, 0.0);
  ev.curv.assign(r + 1, 0.0);
  auto& pt = ev.point;
  pt.t = st.t;
  pt.schedule = sch;
  const auto tree = run_tree(sets, sch, st, basic_request(sets));
  const bool pq_active = st.t < 1.0;
  for (std::size_t k1 = 1; k1 <= r; ++k1) {
    const auto np = jackknife_mean(replica_per_draw(tree, k1, kNormProduct));
    const auto yo = jackknife_mean(replica_per_draw(tree, k1, kYOverlap));
    const auto xo = jackknife_mean(replica_per_draw(tree, k1, kXOverlap));
    ev.q_target[k1] = np.value > 0.0 ? yo.value / np.value : sch.q[k1];
    ev.p_target[k1] = np.value > 0.0 ? xo.value / np.value : sch.p[k1];
    const auto pb = jackknife_mean(p_bracket_per_draw(tree, sch, k1));
    const auto qb = jackknife_mean(q_bracket_per_draw(tree, sch, k1));
    pt.names.push_back("p[" + std::to_string(k1) + "]");
    pt.residuals.push_back(pq_active ? pb.value : 0.0);
    pt.residual_se.push_back(pq_active ? pb.std_error : 0.0);
    pt.names.push_back("q[" + std::to_string(k1) + "]");
    pt.residuals.push_back(pq_active ? qb.value : 0.0);
    pt.residual_se.push_back(pq_active ? qb.std_error : 0.0);
  }
  if (!solve_m) return ev;
  const auto f0 = psi1_per_draw(tree, sch, st, sets.n());
  const double pref = derivative_prefactor(st, sets.n());
  for (std::size_t k1 = 1; k1 <= r; ++k1) {
    const double h = opt.m_step;
    LiftingSchedule lo = sch, hi = sch;
    lo.m[k1] -= h;
    hi.m[k1] += h;
    const auto flo = target_per_draw(Target::Psi1, sets, lo, st);
    const auto fhi = target_per_draw(Target::Psi1, sets, hi, st);
    std::vector<double> g(f0.size()), c(f0.size());
    for (std::size_t i = 0; i < f0.size(); ++i) {
      g[i] = (fhi[i] - flo[i]) / (2.0 * h);
      c[i] = (fhi[i] - 2.0 * f0[i] + flo[i]) / (h * h);
    }
    const auto ge = jackknife_mean(g);
    ev.grad[k1] = ge.value;
    ev.curv[k1] = pairwise_mean(c);
    // Projected gradient on [m_lower, 1] for a minimization in m.
    double res = ge.value / pref;
    const double m = sch.m[k1];
    if ((m <= opt.m_lower + 1e-15 && res > 0.0) || (m >= 1.0 - 1e-15 && res < 0.0)) res = 0.0;
    pt.names.push_back("m[" + std::to_string(k1) + "]");
    pt.residuals.push_back(res);
    pt.residual_se.push_back(res == 0.0 ? 0.0 : ge.std_error / pref);
  }
  return ev;
}

inline bool within_tolerance(const StationaryPoint& pt, double tol) {
  for (std::size_t i = 0; i < pt.residuals.size(); ++i)
    if (std::abs(pt.residuals[i]) > std::max(tol, 2.0 * pt.residual_se[i])) return false;
  return true;
}

/// Single-start block iteration.
inline StationaryPoint solve_from(const ConfigurationSets& sets, LiftingSchedule sch, const EvalSettings& st_in,
                                  double t, bool solve_m, const SolverOptions& opt, const std::string& label) {
  EvalSettings st = st_in;
  st.t = t;
  const std::size_t r = sch.r;
  project_schedule(sch, opt.m_lower);
  require_valid(sch);
  StationaryPoint last;
  for (std::size_t it = 0; it <= opt.max_iter; ++it) {
    auto ev = evaluate_residuals(sets, sch, st, solve_m, opt);
    last = std::move(ev.point);
    last.iterations = it;
    last.start = label;
    last.converged = within_tolerance(last, opt.tol);
    if (opt.trace) {
      std::ostringstream os;
      os << "{\"start\":\"" << label << "\",\"t\":" << t << ",\"iter\":" << it
         << ",\"max_residual\":" << last.max_residual() << "}";
      opt.trace(os.str());
    }
    if (last.converged || it == opt.max_iter) break;
    if (t < 1.0) {
      for (std::size_t k1 = 1; k1 <= r; ++k1) {
        sch.p[k1] = (1.0 - opt.damping) * sch.p[k1] + opt.damping * ev.p_target[k1];
        sch.q[k1] = (1.0 - opt.damping) * sch.q[k1] + opt.damping * ev.q_target[k1];
      }
    }
    if (solve_m) {
      const double pref = derivative_prefactor(st, sets.n());
      for (std::size_t k1 = 1; k1 <= r; ++k1) {
        const double g = ev.grad[k1];
        const double c = ev.curv[k1];
        double step = c > 0.0 ? -g / c : -0.1 * g / pref;
        step = std::clamp(step, -opt.m_max_move, opt.m_max_move);
        sch.m[k1] += step;
      }
    }
    project_schedule(sch, opt.m_lower);
  }
  return last;
}

inline bool better(const StationaryPoint& a, const StationaryPoint& b) {
  if (a.converged != b.converged) return a.converged;
  return a.max_residual() < b.max_residual();
}

inline LiftingSchedule random_start(const LiftingSchedule& like, std::uint64_t key, double m_lower, bool keep_m) {
  LiftingSchedule s = like;
  const std::size_t r = like.r;
  std::vector<double> p(r), q(r);
  for (std::size_t k = 0; k < r; ++k) {
    p[k] = like.p[0] * rng::uniform(key, 3 * k);
    q[k] = like.q[0] * rng::uniform(key, 3 * k + 1);
  }
  std::sort(p.rbegin(), p.rend());
  std::sort(q.rbegin(), q.rend());
  for (std::size_t k = 1; k <= r; ++k) {
    s.p[k] = p[k - 1];
    s.q[k] = q[k - 1];
    if (!keep_m) s.m[k] = m_lower + (1.0 - m_lower) * rng::uniform(key, 3 * (k - 1) + 2);
  }
  return s;
}

inline StationaryPoint solve_multistart(const ConfigurationSets& sets, const LiftingSchedule& init,
                                        const EvalSettings& st, double t, bool solve_m, const SolverOptions& opt) {
  require_valid(init);
  if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("t must lie in [0, 1]");
  if (t == 1.0 && !solve_m) {
    // Both equation families carry the factor (1 - t): nothing to solve.
    StationaryPoint pt;
    pt.t = t;
    pt.schedule = init;
    for (std::size_t k1 = 1; k1 <= init.r; ++k1) {
      pt.names.push_back("p[" + std::to_string(k1) + "]");
      pt.names.push_back("q[" + std::to_string(k1) + "]");
    }
    pt.residuals.assign(pt.names.size(), 0.0);
    pt.residual_se.assign(pt.names.size(), 0.0);
    pt.converged = true;
    pt.start = "init";
    return pt;
  }
  auto best = solve_from(sets, init, st, t, solve_m, opt, "init");
  for (std::size_t j = 0; j < opt.random_starts; ++j) {
    const auto key = rng::combine(rng::combine(opt.start_seed, st.seed), j);
    auto cand = solve_from(sets, random_start(init, key, opt.m_lower, !solve_m), st, t, solve_m, opt,
                           "random-" + std::to_string(j));
    if (better(cand, best)) best = std::move(cand);
  }
  if (opt.t0_warm_start && t > 0.0) {
    SolverOptions o0 = opt;
    o0.random_starts = 0;
    o0.t0_warm_start = false;
    const auto at0 = solve_from(sets, init, st, 0.0, solve_m, o0, "t0");
    auto cand = solve_from(sets, at0.schedule, st, t, solve_m, opt, "t0-warm");
    if (better(cand, best)) best = std::move(cand);
  }
  return best;
}

}  // namespace detail

/// All three equation families.
inline StationaryPoint solve_complete_frame(const ConfigurationSets& sets, const EvalSettings& st, double t,
                                            const LiftingSchedule& init, const SolverOptions& opt = {}) {
  return detail::solve_multistart(sets, init, st, t, true, opt);
}

/// p and q families at the fixed m of `init`.
inline StationaryPoint solve_modulo_m(const ConfigurationSets& sets, const EvalSettings& st, double t,
                                      const LiftingSchedule& init, const SolverOptions& opt = {}) {
  return detail::solve_multistart(sets, init, st, t, false, opt);
}

struct PathScan {
  std::vector<double> t;
  std::vector<StationaryPoint> points;
  std::vector<Estimate> psi1;
  std::vector<std::string> warm_start;          // source of the initial point per t
  std::vector<std::vector<double>> concentration;  // per t, per k1: <(p|x||x'| - x'x)(q|y||y'| - y'y)>
  std::vector<double> jump;                     // max parameter change from the previous t
  std::vector<bool> jump_flag;
  double max_deviation = 0.0;                   // max pairwise |psi1(t_i) - psi1(t_j)|
  double max_deviation_se = 0.0;

  bool all_converged() const {
    for (const auto& p : points)
      if (!p.converged) return false;
    return true;
  }
};

inline PathScan path_scan(const ConfigurationSets& sets, const EvalSettings& st, const std::vector<double>& grid,
                          const LiftingSchedule& init, const SolverOptions& opt = {}) {
  if (grid.empty()) throw ArgumentError("path_scan: empty t grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0 && grid[i] <= 1.0)) throw ArgumentError("path_scan: grid must lie in [0, 1]");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ArgumentError("path_scan: grid must be strictly increasing");
  }
  PathScan scan;
  scan.t = grid;
  LiftingSchedule start = init;
  std::vector<std::vector<double>> per_draw;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    scan.warm_start.push_back(i == 0 ? "init" : "t=" + std::to_string(grid[i - 1]));
    auto pt = solve_complete_frame(sets, st, grid[i], start, opt);
    EvalSettings at = st;
    at.t = grid[i];
    const auto tree = run_tree(sets, pt.schedule, at, basic_request(sets));
    auto v = psi1_per_draw(tree, pt.schedule, at, sets.n());
    scan.psi1.push_back(jackknife_mean(v));
    per_draw.push_back(std::move(v));
    std::vector<double> conc;
    for (std::size_t k1 = 1; k1 <= pt.schedule.r; ++k1) {
      const double p = pt.schedule.p[k1], q = pt.schedule.q[k1];
      std::vector<double> c(tree.draws.size());
      for (std::size_t d = 0; d < c.size(); ++d)
        c[d] = p * q * tree.replica(d, k1, kNormProduct) - p * tree.replica(d, k1, kYOverlap) -
               q * tree.replica(d, k1, kXOverlap) + tree.replica(d, k1, kFullOverlap);
      conc.push_back(pairwise_mean(c));
    }
    scan.concentration.push_back(std::move(conc));
    double jump = 0.0;
    if (i > 0) {
      const auto& prev = scan.points.back().schedule;
      for (std::size_t k = 1; k <= prev.r; ++k) {
        jump = std::max({jump, std::abs(prev.p[k] - pt.schedule.p[k]), std::abs(prev.q[k] - pt.schedule.q[k]),
                         std::abs(prev.m[k] - pt.schedule.m[k])});
      }
    }
    scan.jump.push_back(jump);
    scan.jump_flag.push_back(jump > opt.jump_threshold);
    start = pt.schedule;
    scan.points.push_back(std::move(pt));
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t j = i + 1; j < grid.size(); ++j) {
      std::vector<double> d(per_draw[i].size());
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = per_draw[i][k] - per_draw[j][k];
      const auto e = jackknife_mean(d);
      if (std::abs(e.value) > scan.max_deviation) {
        scan.max_deviation = std::abs(e.value);
        scan.max_deviation_se = e.std_error;
      }
    }
  }
  return scan;
}

struct IdentityReport {
  StationaryPoint at_one;
  StationaryPoint at_zero;
  Estimate left;        // psi_S at t = 1
  Estimate right;       // psi_S at t = 0 minus the level-sum correction
  Estimate difference;  // paired left - right
};

/// Compares psi_S(t=1) at the t=1 stationary point with
///   psi_S(t=0) - sign(s) s beta / (2 sqrt n) sum_k (p_k-1 q_k-1 - p_k q_k) m_k
/// at the t=0 stationary point. Requires unit-norm sets.
inline IdentityReport sfl_identity_check(const ConfigurationSets& sets, const EvalSettings& st,
                                         const LiftingSchedule& init, const SolverOptions& opt = {}) {
  if (!is_unit_norm(sets).both()) throw ArgumentError("identity check requires unit-norm sets");
  IdentityReport rep;
  rep.at_one = solve_complete_frame(sets, st, 1.0, init, opt);
  rep.at_zero = solve_complete_frame(sets, st, 0.0, init, opt);
  EvalSettings s1 = st, s0 = st;
  s1.t = 1.0;
  s0.t = 0.0;
  const auto l = target_per_draw(Target::PsiS, sets, rep.at_one.schedule, s1);
  auto r = target_per_draw(Target::PsiS, sets, rep.at_zero.schedule, s0);
  const auto& z = rep.at_zero.schedule;
  double sum = 0.0;
  for (std::size_t k = 1; k <= z.r + 1; ++k) sum += (z.p[k - 1] * z.q[k - 1] - z.p[k] * z.q[k]) * z.m[k];
  const double corr = derivative_prefactor(st, sets.n()) * sum;
  for (auto& v : r) v -= corr;
  std::vector<double> d(l.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = l[i] - r[i];
  rep.left = jackknife_mean(l);
  rep.right = jackknife_mean(r);
  rep.difference = jackknife_mean(d);
  return rep;
}

}  // namespace sfl
