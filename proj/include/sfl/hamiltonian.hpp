// Interpolated exponent matrix D0 and the log-domain partition structures.
#pragma once

#include "sfl/ensemble.hpp"
#include "sfl/environment.hpp"
#include "sfl/errors.hpp"
#include "sfl/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sfl {

/// log(sum_i exp(v_i)) with max subtraction.
template <class Derived>
inline double logsumexp(const Eigen::DenseBase<Derived>& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.derived().array() - mx).exp().sum());
}

/// Aggregated noise of one evaluation: A = sum a_k u4[k] (scalar),
/// yb = Y (sum b_k u2[k]) and xc = X (sum c_k h[k]).
struct ProjectedNoise {
  double a = 0.0;
  Vector yb;
  Vector xc;
};

/// Assembles D0 from the precomputed bilinear part X G^T Y^T and the
/// aggregated one-sided noise.
inline Matrix assemble_d0(const OverlapTables& ov, const Matrix& gyx, const ProjectedNoise& noise, double t) {
  const double st = std::sqrt(t);
  const double s1t = std::sqrt(1.0 - t);
  Matrix d0 = st * gyx;
  if (s1t != 0.0) {
    d0.noalias() += s1t * (ov.xnorm * noise.yb.transpose());
    d0.noalias() += s1t * (noise.xc * ov.ynorm.transpose());
  }
  if (st != 0.0 && noise.a != 0.0) d0.noalias() += (st * noise.a) * (ov.xnorm * ov.ynorm.transpose());
  return d0;
}

/// lx x ly matrix of D0(i1, i2). With include_a = false the sqrt(t) ||x|| ||y||
/// sum a_k u4[k] term is omitted (the S-variant).
inline Matrix d0_matrix(const ConfigurationSets& sets, const DerivedCoefficients& coeffs,
                        const GaussianEnvironment& env, double t, bool include_a = true) {
  if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("t must lie in [0, 1]");
  const auto n = static_cast<Eigen::Index>(sets.n());
  const auto m = static_cast<Eigen::Index>(sets.m());
  if (env.G.rows() != m || env.G.cols() != n) {
    std::ostringstream os;
    os << "G is " << env.G.rows() << "x" << env.G.cols() << ", sets need " << m << "x" << n;
    throw DimensionError(os.str());
  }
  if (env.levels() != coeffs.levels()) throw DimensionError("environment and schedule depth differ");
  Vector bsum = Vector::Zero(m);
  Vector csum = Vector::Zero(n);
  ProjectedNoise noise;
  for (std::size_t k = 1; k <= coeffs.levels(); ++k) {
    if (env.u2[k].size() != m || env.h[k].size() != n) throw DimensionError("level noise has wrong length");
    if (include_a) noise.a += coeffs.a[k] * env.u4[k];
    bsum += coeffs.b[k] * env.u2[k];
    csum += coeffs.c[k] * env.h[k];
  }
  noise.yb = sets.y() * bsum;
  noise.xc = sets.x() * csum;
  const Matrix gyx = sets.x() * env.G.transpose() * sets.y().transpose();
  return assemble_d0(sets.overlaps(), gyx, noise, t);
}

struct LogPartitionState {
  Matrix d0;     // lx x ly
  Vector logC;   // lx
  double logZ = 0.0;
  double beta = 1.0;
};

inline void check_beta_s(double beta, double s) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ArgumentError("beta > 0 required");
  if (s == 0.0 || !std::isfinite(s)) throw ArgumentError("s != 0 required");
}

inline LogPartitionState log_partition(const Matrix& d0, double beta, double s) {
  check_beta_s(beta, s);
  LogPartitionState st;
  st.d0 = d0;
  st.beta = beta;
  st.logC.resize(d0.rows());
  for (Eigen::Index i = 0; i < d0.rows(); ++i) st.logC(i) = beta * d0.row(i).maxCoeff();
  for (Eigen::Index i = 0; i < d0.rows(); ++i) {
    const double mx = st.logC(i);
    st.logC(i) = mx + std::log((beta * d0.row(i).array() - mx).exp().sum());
  }
  st.logZ = logsumexp(s * st.logC);
  return st;
}

/// Row-conditional weights A(i1, i2) / C(i1), each row a distribution.
inline Matrix conditional_rows(const Matrix& d0, double beta) {
  Matrix rho(d0.rows(), d0.cols());
  for (Eigen::Index i = 0; i < d0.rows(); ++i) {
    const double mx = beta * d0.row(i).maxCoeff();
    rho.row(i) = (beta * d0.row(i).array() - mx).exp();
    rho.row(i) /= rho.row(i).sum();
  }
  return rho;
}

/// Row marginal C(i1)^s / Z.
inline Vector row_marginal(const Vector& logC, double s) {
  const Vector e = s * logC;
  Vector pi = (e.array() - e.maxCoeff()).exp();
  return pi / pi.sum();
}

/// gamma0(i1, i2) = C(i1)^s / Z * A(i1, i2) / C(i1), evaluated as the product
/// of the row marginal and the row-conditional weights so that large beta*d0
/// never meets an explicit exponent.
inline Matrix gamma0(const LogPartitionState& st, double s) {
  check_beta_s(st.beta, s);
  return row_marginal(st.logC, s).asDiagonal() * conditional_rows(st.d0, st.beta);
}

}  // namespace sfl
