// Analytic derivatives of psi and psi1 with respect to the lifting parameters
// and t, and the common-random-number finite-difference oracle.
//
// With pref = |s| beta / (2 sqrt(n)) and all averages on gamma_{k1+1}:
//   dpsi/dp_k1  = -pref (m_k1 - m_k1+1) [(1-t) <|x||x'| y'y> + t q_k1 <|x||x'||y||y'|>]
//   dpsi/dq_k1  = -pref (m_k1 - m_k1+1) [(1-t) <x'x |y||y'|> + t p_k1 <|x||x'||y||y'|>]
//   dpsi1/dp_k1 = (1-t) (m_k1 - m_k1+1) pref <|x||x'| (q_k1 |y||y'| - y'y)>
//   dpsi1/dq_k1 = (1-t) (m_k1 - m_k1+1) pref <(p_k1 |x||x'| - x'x) |y||y'|>
// and
//   dpsi/dt = sign(s) beta / (2 sqrt(n)) (sum_{k1=1}^{r+1} phi_k1 + phi01 + phi02),
//   phi_k1 = -s (m_k1-1 - m_k1) <(p_k1-1 |x||x'| - x'x)(q_k1-1 |y||y'| - y'y)>  on gamma_k1,
//   phi01  = (1-p0)(1-q0) <|x|^2 |y|^2>                                          on gamma01,
//   phi02  = (s-1)(1-p0) <|x|^2 (y'y - q0 |y||y'|)>                              on gamma02.
#pragma once

#include "sfl/ensemble.hpp"
#include "sfl/errors.hpp"
#include "sfl/estimate.hpp"
#include "sfl/functionals.hpp"
#include "sfl/gamma_measures.hpp"
#include "sfl/nested_estimator.hpp"
#include "sfl/sample_tree.hpp"
#include "sfl/schedule.hpp"
#include "sfl/settings.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace sfl {

enum class Target { Psi, Psi1, PsiS };
enum class Variable { P, Q, T, M };
enum class Method { Analytic, FiniteDifference };

inline const char* to_string(Target t) {
  switch (t) {
    case Target::Psi: return "psi";
    case Target::Psi1: return "psi1";
    case Target::PsiS: return "psi_s";
  }
  return "?";
}

inline const char* to_string(Variable v) {
  switch (v) {
    case Variable::P: return "p";
    case Variable::Q: return "q";
    case Variable::T: return "t";
    case Variable::M: return "m";
  }
  return "?";
}

inline Target parse_target(const std::string& s) {
  if (s == "psi") return Target::Psi;
  if (s == "psi1") return Target::Psi1;
  if (s == "psi_s" || s == "psiS" || s == "psi-s") return Target::PsiS;
  throw ArgumentError("unknown target '" + s + "'");
}

inline Variable parse_variable(const std::string& s) {
  if (s == "p") return Variable::P;
  if (s == "q") return Variable::Q;
  if (s == "t") return Variable::T;
  if (s == "m") return Variable::M;
  throw ArgumentError("unknown variable '" + s + "'");
}

struct DerivativeRequest {
  Target target = Target::Psi;
  Variable variable = Variable::P;
  std::size_t k1 = 1;
  Method method = Method::Analytic;
  double step = 0.0;  // 0 selects the default
};

inline bool has_analytic(Target target, Variable v) {
  if (target == Target::Psi) return v == Variable::P || v == Variable::Q || v == Variable::T;
  if (target == Target::Psi1) return v == Variable::P || v == Variable::Q;
  return false;
}

inline void check_level(const LiftingSchedule& sch, std::size_t k1) {
  if (k1 < 1 || k1 > sch.r) {
    std::ostringstream os;
    os << "level k1 = " << k1 << " outside 1.." << sch.r;
    throw ArgumentError(os.str());
  }
}

// Per-draw formulas on a tree evaluated with basic_request().

inline std::vector<double> dpsi_dp_per_draw(const TreeResults& tree, const LiftingSchedule& sch,
                                            const EvalSettings& st, std::size_t n, std::size_t k1,
                                            bool y_side = false) {
  check_level(sch, k1);
  const double dm = sch.m[k1] - sch.m[k1 + 1];
  std::vector<double> v(tree.draws.size(), 0.0);
  if (dm == 0.0) return v;
  const double pref = derivative_prefactor(st, n);
  const double t = st.t;
  const double other = y_side ? sch.p[k1] : sch.q[k1];
  const std::size_t overlap = y_side ? kXOverlap : kYOverlap;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double np = tree.replica(i, k1, kNormProduct);
    const double ov = tree.replica(i, k1, overlap);
    v[i] = -pref * dm * ((1.0 - t) * ov + t * other * np);
  }
  return v;
}

inline std::vector<double> dpsi_dq_per_draw(const TreeResults& tree, const LiftingSchedule& sch,
                                            const EvalSettings& st, std::size_t n, std::size_t k1) {
  return dpsi_dp_per_draw(tree, sch, st, n, k1, true);
}

/// Raw bracket of the p-equation (q_k1 <norm product> - <y-overlap>) on gamma_{k1+1}.
inline std::vector<double> p_bracket_per_draw(const TreeResults& tree, const LiftingSchedule& sch, std::size_t k1) {
  check_level(sch, k1);
  std::vector<double> v(tree.draws.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = sch.q[k1] * tree.replica(i, k1, kNormProduct) - tree.replica(i, k1, kYOverlap);
  return v;
}

/// Raw bracket of the q-equation (p_k1 <norm product> - <x-overlap>) on gamma_{k1+1}.
inline std::vector<double> q_bracket_per_draw(const TreeResults& tree, const LiftingSchedule& sch, std::size_t k1) {
  check_level(sch, k1);
  std::vector<double> v(tree.draws.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = sch.p[k1] * tree.replica(i, k1, kNormProduct) - tree.replica(i, k1, kXOverlap);
  return v;
}

inline std::vector<double> dpsi1_dp_per_draw(const TreeResults& tree, const LiftingSchedule& sch,
                                             const EvalSettings& st, std::size_t n, std::size_t k1,
                                             bool y_side = false) {
  check_level(sch, k1);
  const double f = (1.0 - st.t) * (sch.m[k1] - sch.m[k1 + 1]);
  std::vector<double> v(tree.draws.size(), 0.0);
  if (f == 0.0) return v;
  const double pref = derivative_prefactor(st, n);
  const auto br = y_side ? q_bracket_per_draw(tree, sch, k1) : p_bracket_per_draw(tree, sch, k1);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f * pref * br[i];
  return v;
}

inline std::vector<double> dpsi1_dq_per_draw(const TreeResults& tree, const LiftingSchedule& sch,
                                             const EvalSettings& st, std::size_t n, std::size_t k1) {
  return dpsi1_dp_per_draw(tree, sch, st, n, k1, true);
}

struct TimeDerivativeTerms {
  std::vector<double> phi_sum;  // sum over k1 of phi_k1
  std::vector<double> phi01;
  std::vector<double> phi02;
  std::vector<double> total;    // dpsi/dt
};

/// With boundary = false the phi01/phi02 terms are evaluated only when their
/// prefactors are nonzero (p0 < 1 or q0 < 1).
inline TimeDerivativeTerms dpsi_dt_terms(const TreeResults& tree, const ConfigurationSets& sets,
                                         const LiftingSchedule& sch, const EvalSettings& st,
                                         bool boundary = false) {
  const std::size_t nd = tree.draws.size();
  TimeDerivativeTerms out;
  out.phi_sum.assign(nd, 0.0);
  out.phi01.assign(nd, 0.0);
  out.phi02.assign(nd, 0.0);
  out.total.assign(nd, 0.0);
  const double s = st.s;
  for (std::size_t k1 = 1; k1 <= sch.r + 1; ++k1) {
    const double dm = sch.m[k1 - 1] - sch.m[k1];
    if (dm == 0.0) continue;
    const double p = sch.p[k1 - 1];
    const double q = sch.q[k1 - 1];
    for (std::size_t i = 0; i < nd; ++i) {
      const double np = tree.replica(i, k1 - 1, kNormProduct);
      const double yo = tree.replica(i, k1 - 1, kYOverlap);
      const double xo = tree.replica(i, k1 - 1, kXOverlap);
      const double oo = tree.replica(i, k1 - 1, kFullOverlap);
      out.phi_sum[i] += -s * dm * (p * q * np - p * yo - q * xo + oo);
    }
  }
  const double c01 = (1.0 - sch.p[0]) * (1.0 - sch.q[0]);
  const double c02 = (s - 1.0) * (1.0 - sch.p[0]);
  if (boundary || c01 != 0.0) {
    const Matrix f = norm_squared_product(sets.overlaps());
    for (std::size_t i = 0; i < nd; ++i) out.phi01[i] = c01 * single_average(tree.draws[i].mu, f);
  }
  if (boundary || c02 != 0.0) {
    for (std::size_t i = 0; i < nd; ++i)
      out.phi02[i] = c02 * (tree.draws[i].side[kSideOverlap] - sch.q[0] * tree.draws[i].side[kSideNorms]);
  }
  const double pref = sign_of(s) * st.beta / (2.0 * std::sqrt(static_cast<double>(sets.n())));
  for (std::size_t i = 0; i < nd; ++i) out.total[i] = pref * (out.phi_sum[i] + out.phi01[i] + out.phi02[i]);
  return out;
}

inline Estimate dpsi_dp(const ConfigurationSets& sets, const LiftingSchedule& sch, const EvalSettings& st,
                        std::size_t k1) {
  check_level(sch, k1);
  const auto tree = run_tree(sets, sch, st, basic_request(sets));
  return jackknife_mean(dpsi_dp_per_draw(tree, sch, st, sets.n(), k1));
}

inline Estimate dpsi_dq(const ConfigurationSets& sets, const LiftingSchedule& sch, const EvalSettings& st,
                        std::size_t k1) {
  check_level(sch, k1);
  const auto tree = run_tree(sets, sch, st, basic_request(sets));
  return jackknife_mean(dpsi_dq_per_draw(tree, sch, st, sets.n(), k1));
}

inline Estimate dpsi_dt(const ConfigurationSets& sets, const LiftingSchedule& sch, const EvalSettings& st) {
  const auto tree = run_tree(sets, sch, st, basic_request(sets));
  return jackknife_mean(dpsi_dt_terms(tree, sets, sch, st).total);
}

inline Estimate dpsi1_dp(const ConfigurationSets& sets, const LiftingSchedule& sch, const EvalSettings& st,
                         std::size_t k1) {
  check_level(sch, k1);
  const auto tree = run_tree(sets, sch, st, basic_request(sets));
  return jackknife_mean(dpsi1_dp_per_draw(tree, sch, st, sets.n(), k1));
}

inline Estimate dpsi1_dq(const ConfigurationSets& sets, const LiftingSchedule& sch, const EvalSettings& st,
                         std::size_t k1) {
  check_level(sch, k1);
  const auto tree = run_tree(sets, sch, st, basic_request(sets));
  return jackknife_mean(dpsi1_dq_per_draw(tree, sch, st, sets.n(), k1));
}

/// Per-draw analytic derivative for a supported (target, variable) pair.
inline std::vector<double> analytic_per_draw(const DerivativeRequest& rq, const TreeResults& tree,
                                             const ConfigurationSets& sets, const LiftingSchedule& sch,
                                             const EvalSettings& st) {
  if (!has_analytic(rq.target, rq.variable)) {
    std::ostringstream os;
    os << "no analytic formula for d" << to_string(rq.target) << "/d" << to_string(rq.variable)
       << "; use the finite-difference method";
    throw ArgumentError(os.str());
  }
  const std::size_t n = sets.n();
  if (rq.target == Target::Psi) {
    if (rq.variable == Variable::P) return dpsi_dp_per_draw(tree, sch, st, n, rq.k1);
    if (rq.variable == Variable::Q) return dpsi_dq_per_draw(tree, sch, st, n, rq.k1);
    return dpsi_dt_terms(tree, sets, sch, st).total;
  }
  if (rq.variable == Variable::P) return dpsi1_dp_per_draw(tree, sch, st, n, rq.k1);
  return dpsi1_dq_per_draw(tree, sch, st, n, rq.k1);
}

inline Estimate analytic_derivative(const DerivativeRequest& rq, const ConfigurationSets& sets,
                                    const LiftingSchedule& sch, const EvalSettings& st) {
  if (rq.variable != Variable::T) check_level(sch, rq.k1);
  if (!has_analytic(rq.target, rq.variable)) analytic_per_draw(rq, TreeResults{}, sets, sch, st);  // throws
  const auto tree = run_tree(sets, sch, st, basic_request(sets));
  return jackknife_mean(analytic_per_draw(rq, tree, sets, sch, st));
}

/// Per-draw values of a target functional.
inline std::vector<double> target_per_draw(Target target, const ConfigurationSets& sets, const LiftingSchedule& sch,
                                           const EvalSettings& st) {
  if (target == Target::Psi1) {
    const auto tree = run_tree(sets, sch, st, basic_request(sets));
    return psi1_per_draw(tree, sch, st, sets.n());
  }
  TreeRequest req;
  req.include_a = target == Target::Psi;
  const auto tree = run_tree(sets, sch, st, req);
  return psi_per_draw(tree, sch, st, sets.n());
}

struct FdOptions {
  double step = 0.0;            // 0: 1e-3 of the feasible range
  bool allow_one_sided = true;  // fall back to a one-sided difference at a box boundary
};

struct FdPlan {
  double x = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double step = 0.0;
  double lo = 0.0;  // evaluation points
  double hi = 0.0;
  bool one_sided = false;
  std::string name;
};

inline FdPlan plan_finite_difference(Variable v, std::size_t k1, const LiftingSchedule& sch, const EvalSettings& st,
                                     const FdOptions& opt) {
  FdPlan pl;
  std::string lower_name, upper_name;
  std::ostringstream nm;
  switch (v) {
    case Variable::P:
    case Variable::Q: {
      check_level(sch, k1);
      const auto& vec = v == Variable::P ? sch.p : sch.q;
      const char* c = v == Variable::P ? "p" : "q";
      pl.x = vec[k1];
      pl.lower = vec[k1 + 1];
      pl.upper = vec[k1 - 1];
      nm << c << "[" << k1 << "]";
      lower_name = std::string(c) + "[" + std::to_string(k1 + 1) + "]";
      upper_name = std::string(c) + "[" + std::to_string(k1 - 1) + "]";
      break;
    }
    case Variable::T:
      pl.x = st.t;
      pl.lower = 0.0;
      pl.upper = 1.0;
      nm << "t";
      lower_name = "0";
      upper_name = "1";
      break;
    case Variable::M:
      check_level(sch, k1);
      pl.x = sch.m[k1];
      pl.lower = 0.0;
      pl.upper = std::numeric_limits<double>::infinity();
      nm << "m[" << k1 << "]";
      lower_name = "0 (exclusive)";
      upper_name = "inf";
      break;
  }
  pl.name = nm.str();
  const double range = v == Variable::M ? 1.0 : pl.upper - pl.lower;
  pl.step = opt.step > 0.0 ? opt.step : 1e-3 * range;
  if (!(pl.step > 0.0)) throw InfeasiblePerturbation(pl.name + " has an empty feasible range; cannot perturb");
  const double h = pl.step;
  const bool lo_ok = v == Variable::M ? pl.x - h > 0.0 : pl.x - h >= pl.lower;
  const bool hi_ok = pl.x + h <= pl.upper;
  if (lo_ok && hi_ok) {
    pl.lo = pl.x - h;
    pl.hi = pl.x + h;
    return pl;
  }
  auto fail = [&](bool upper_side) {
    std::ostringstream os;
    if (upper_side)
      os << pl.name << " + h = " << pl.x + h << " exceeds " << upper_name << " = " << pl.upper;
    else
      os << pl.name << " - h = " << pl.x - h << " is below " << lower_name << " = " << pl.lower;
    throw InfeasiblePerturbation(os.str());
  };
  if (!opt.allow_one_sided) fail(!hi_ok);
  pl.one_sided = true;
  if (lo_ok) {
    pl.lo = pl.x - h;
    pl.hi = pl.x;
  } else if (hi_ok) {
    pl.lo = pl.x;
    pl.hi = pl.x + h;
  } else {
    fail(true);
  }
  return pl;
}

inline void apply_variable(Variable v, std::size_t k1, double value, LiftingSchedule& sch, EvalSettings& st) {
  switch (v) {
    case Variable::P: sch.p[k1] = value; break;
    case Variable::Q: sch.q[k1] = value; break;
    case Variable::T: st.t = value; break;
    case Variable::M: sch.m[k1] = value; break;
  }
}

/// Per-draw finite-difference quotients under common random numbers.
inline std::vector<double> finite_difference_per_draw(Target target, Variable v, std::size_t k1,
                                                      const ConfigurationSets& sets, const LiftingSchedule& sch,
                                                      const EvalSettings& st, const FdOptions& opt = {},
                                                      FdPlan* plan_out = nullptr) {
  const auto pl = plan_finite_difference(v, k1, sch, st, opt);
  if (plan_out) *plan_out = pl;
  LiftingSchedule s_lo = sch, s_hi = sch;
  EvalSettings e_lo = st, e_hi = st;
  apply_variable(v, k1, pl.lo, s_lo, e_lo);
  apply_variable(v, k1, pl.hi, s_hi, e_hi);
  const auto f_lo = target_per_draw(target, sets, s_lo, e_lo);
  const auto f_hi = target_per_draw(target, sets, s_hi, e_hi);
  std::vector<double> d(f_lo.size());
  const double width = pl.hi - pl.lo;
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (f_hi[i] - f_lo[i]) / width;
  return d;
}

inline Estimate finite_difference(Target target, Variable v, std::size_t k1, const ConfigurationSets& sets,
                                  const LiftingSchedule& sch, const EvalSettings& st, const FdOptions& opt = {}) {
  FdPlan pl;
  auto est = jackknife_mean(finite_difference_per_draw(target, v, k1, sets, sch, st, opt, &pl));
  est.one_sided = pl.one_sided;
  return est;
}

struct DerivativeCheck {
  Estimate analytic;
  Estimate fd;
  Estimate difference;  // paired per-draw analytic - fd
  bool passed = false;
};

/// Analytic formula against the CRN finite difference. Agreement means
/// |difference| <= max(3 SE of the paired difference, rel_tol |analytic|).
inline DerivativeCheck check_derivative(const DerivativeRequest& rq, const ConfigurationSets& sets,
                                        const LiftingSchedule& sch, const EvalSettings& st,
                                        double rel_tol = 1e-3) {
  DerivativeCheck out;
  const auto tree = run_tree(sets, sch, st, basic_request(sets));
  const auto an = analytic_per_draw(rq, tree, sets, sch, st);
  FdPlan pl;
  FdOptions opt;
  opt.step = rq.step;
  const auto fd = finite_difference_per_draw(rq.target, rq.variable, rq.k1, sets, sch, st, opt, &pl);
  std::vector<double> diff(an.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = an[i] - fd[i];
  out.analytic = jackknife_mean(an);
  out.fd = jackknife_mean(fd);
  out.fd.one_sided = pl.one_sided;
  out.difference = jackknife_mean(diff);
  const double tol = std::max(3.0 * out.difference.std_error, rel_tol * std::abs(out.analytic.value));
  out.passed = std::abs(out.difference.value) <= tol;
  return out;
}

}  // namespace sfl
