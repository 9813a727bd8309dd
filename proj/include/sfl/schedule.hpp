// Lifting schedules (m, p, q) and the derived per-level noise coefficients.
//
// A schedule of depth r carries three vectors indexed 0..r+1:
//   m: nesting exponents, m[0] = 1, m[r+1] = 0, m[k] > 0 for 1 <= k <= r
//   p: x-side chain 1 >= p[0] >= p[1] >= ... >= p[r] >= p[r+1] = 0
//   q: y-side chain, same shape as p
// Level k in 1..r+1 receives the Gaussian block U_k weighted by
//   a[k] = sqrt(p[k-1] q[k-1] - p[k] q[k]),  b[k] = sqrt(p[k-1] - p[k]),
//   c[k] = sqrt(q[k-1] - q[k]).
#pragma once

#include "sfl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

namespace sfl {

struct LiftingSchedule {
  std::size_t r = 1;
  std::vector<double> m;  // size r+2
  std::vector<double> p;  // size r+2
  std::vector<double> q;  // size r+2

  static LiftingSchedule make(std::vector<double> m, std::vector<double> p, std::vector<double> q) {
    LiftingSchedule s;
    s.r = m.size() >= 2 ? m.size() - 2 : 0;
    s.m = std::move(m);
    s.p = std::move(p);
    s.q = std::move(q);
    return s;
  }

  bool operator==(const LiftingSchedule&) const = default;
};

/// Coefficients indexed 1..r+1; entry 0 is unused and kept at zero so that
/// a[k] reads the same as the level index.
struct DerivedCoefficients {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> c;

  std::size_t levels() const { return a.empty() ? 0 : a.size() - 1; }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  std::string summary() const {
    std::string out;
    for (const auto& v : violations) {
      if (!out.empty()) out += "; ";
      out += v;
    }
    return out;
  }
};

inline constexpr double kExponentTieTolerance = 1e-12;

inline ValidationReport validate(const LiftingSchedule& s) {
  ValidationReport rep;
  auto add = [&](const std::string& msg) { rep.violations.push_back(msg); };
  if (s.r < 1) add("r >= 1 required");
  const std::size_t len = s.r + 2;
  auto check_len = [&](const std::vector<double>& v, const char* name) {
    if (v.size() != len) {
      std::ostringstream os;
      os << name << " must have " << len << " entries (indices 0..r+1), got " << v.size();
      add(os.str());
      return false;
    }
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!std::isfinite(v[k])) {
        std::ostringstream os;
        os << name << "[" << k << "] is not finite";
        add(os.str());
        return false;
      }
    }
    return true;
  };
  const bool m_ok = check_len(s.m, "m");
  const bool p_ok = check_len(s.p, "p");
  const bool q_ok = check_len(s.q, "q");

  if (m_ok) {
    if (s.m[0] != 1.0) add("m[0] = 1 required");
    if (s.m[s.r + 1] != 0.0) {
      std::ostringstream os;
      os << "m[" << s.r + 1 << "] = 0 required";
      add(os.str());
    }
    for (std::size_t k = 1; k <= s.r; ++k) {
      if (!(s.m[k] > 0.0)) {
        std::ostringstream os;
        os << "m[" << k << "] > 0 required";
        add(os.str());
      }
    }
  }
  auto check_chain = [&](const std::vector<double>& v, const char* name) {
    if (v[0] > 1.0) {
      std::ostringstream os;
      os << name << "[0] <= 1 required";
      add(os.str());
    }
    for (std::size_t k = 1; k < v.size(); ++k) {
      if (v[k] > v[k - 1]) {
        std::ostringstream os;
        os << name << " non-increasing at k=" << k;
        add(os.str());
      }
    }
    if (v[s.r + 1] != 0.0) {
      std::ostringstream os;
      os << name << "[" << s.r + 1 << "] = 0 required";
      add(os.str());
    }
    if (v[s.r] < 0.0) {
      std::ostringstream os;
      os << name << "[" << s.r << "] >= 0 required";
      add(os.str());
    }
  };
  if (p_ok) check_chain(s.p, "p");
  if (q_ok) check_chain(s.q, "q");
  return rep;
}

inline void require_valid(const LiftingSchedule& s) {
  auto rep = validate(s);
  if (!rep.ok()) throw ScheduleError("invalid schedule: " + rep.summary());
}

inline DerivedCoefficients derived_coefficients(const LiftingSchedule& s) {
  require_valid(s);
  DerivedCoefficients d;
  const std::size_t levels = s.r + 1;
  d.a.assign(levels + 1, 0.0);
  d.b.assign(levels + 1, 0.0);
  d.c.assign(levels + 1, 0.0);
  // Radicands are nonnegative on a valid schedule; clamp roundoff only.
  for (std::size_t k = 1; k <= levels; ++k) {
    d.a[k] = std::sqrt(std::max(0.0, s.p[k - 1] * s.q[k - 1] - s.p[k] * s.q[k]));
    d.b[k] = std::sqrt(std::max(0.0, s.p[k - 1] - s.p[k]));
    d.c[k] = std::sqrt(std::max(0.0, s.q[k - 1] - s.q[k]));
  }
  return d;
}

/// Removes index k-1 whenever m[k] equals m[k-1] (2 <= k <= r). The level-k
/// outer average then has exponent one, so levels k-1 and k act as one
/// Gaussian block with the summed variances. A tie m[1] = m[0] = 1 is an
/// ordinary exponent-one level and is left in place: level 0 carries no
/// Gaussian block to merge into.
inline LiftingSchedule collapse_equivalent(const LiftingSchedule& s) {
  require_valid(s);
  std::vector<double> m{s.m[0]}, p{s.p[0]}, q{s.q[0]};
  for (std::size_t k = 1; k <= s.r + 1; ++k) {
    const bool tie = k >= 2 && k <= s.r && std::abs(s.m[k] - m.back()) <= kExponentTieTolerance;
    if (tie) {
      // Drop the previous index; level k inherits the merged exponent.
      m.back() = s.m[k];
      p.back() = s.p[k];
      q.back() = s.q[k];
      continue;
    }
    m.push_back(s.m[k]);
    p.push_back(s.p[k]);
    q.push_back(s.q[k]);
  }
  return LiftingSchedule::make(std::move(m), std::move(p), std::move(q));
}

}  // namespace sfl
