// Nested sample tree shared by every estimator.
//
// One outer draw fixes G and U_{r+1} (the level r+1 root). A level-k node has
// U_k, ..., U_{r+1} fixed; its children are the draws of U_{k-1}. Level-1
// nodes are leaves where Z and gamma0 are evaluated. Going up, each node
// computes
//   log zeta_{k-1} = log sum_j w_j zeta_{k-2,j}^{m_{k-1}/m_{k-2}}
// and the reweighting W_j = w_j zeta_{k-2,j}^{ratio} / zeta_{k-1}, which is the
// sample form of the Phi operator. The single-replica marginal mu of a node is
// the W-average of its children's marginals (gamma0 at a leaf). The
// two-replica average with split level k1 is formed from mu x mu at the
// level-(k1+1) node and then pushed up by the W weights of the levels above.
#pragma once

#include "sfl/ensemble.hpp"
#include "sfl/environment.hpp"
#include "sfl/errors.hpp"
#include "sfl/estimate.hpp"
#include "sfl/functionals.hpp"
#include "sfl/hamiltonian.hpp"
#include "sfl/quadrature.hpp"
#include "sfl/rng.hpp"
#include "sfl/schedule.hpp"
#include "sfl/settings.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <vector>

namespace sfl {

struct TreeRequest {
  bool measures = false;   // carry mu, replica and side averages
  bool include_a = true;   // false evaluates the S-variant (no u4 term)
  std::vector<ReplicaKernel> replica;
  std::vector<SideKernel> side;
};

inline TreeRequest basic_request(const ConfigurationSets& sets, bool include_a = true) {
  TreeRequest req;
  req.measures = true;
  req.include_a = include_a;
  req.replica = basic_replica_kernels(sets.overlaps());
  req.side = basic_side_kernels(sets.overlaps());
  return req;
}

struct DrawResult {
  double log_zeta = 0.0;        // log zeta_r
  Matrix mu;                    // gamma01 marginal, lx x ly
  std::vector<double> replica;  // [k1 * K + j], k1 = 0..r: kernel j on gamma_{k1+1}
  std::vector<double> side;     // gamma02 averages
};

struct TreeResults {
  std::size_t r = 0;
  std::size_t kernels = 0;
  std::size_t leaves_per_draw = 0;
  std::vector<DrawResult> draws;

  double replica(std::size_t draw, std::size_t k1, std::size_t j) const {
    return draws[draw].replica[k1 * kernels + j];
  }
};

namespace detail {

struct LevelDraw {
  double logw = 0.0;
  double u4 = 0.0;
  Vector yu2;  // Y u2
  Vector xh;   // X h
};

struct LevelPlan {
  std::size_t count = 1;
  bool keyed = true;   // draw from the keyed generator; otherwise use `fixed`
  bool use_a = false;
  bool use_b = false;
  bool use_c = false;
  double logw = 0.0;
  std::vector<LevelDraw> fixed;
};

/// Columns L with L L^T = A A^T, restricted to the numerically nonzero spectrum.
inline Matrix range_factor(const Matrix& a) {
  const Eigen::MatrixXd gram = a * a.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const double top = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < gram.rows(); ++i)
    if (eig.eigenvalues()(i) > 1e-12 * std::max(top, 1e-300)) keep.push_back(i);
  Matrix l(gram.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c)
    l.col(static_cast<Eigen::Index>(c)) = eig.eigenvectors().col(keep[c]) * std::sqrt(eig.eigenvalues()(keep[c]));
  return l;
}

class TreeEvaluator {
 public:
  TreeEvaluator(const ConfigurationSets& sets, const LiftingSchedule& sch, const EvalSettings& st,
                const TreeRequest& req)
      : sets_(sets), sch_(sch), st_(st), req_(req), coeffs_(derived_coefficients(sch)) {
    validate_settings(st, sch.r);
    if (sets.n() < 1 || sets.m() < 1) throw DimensionError("empty configuration sets");
    for (const auto& k : req.replica) {
      if (static_cast<std::size_t>(k.kx.rows()) != sets.lx() || static_cast<std::size_t>(k.kx.cols()) != sets.lx() ||
          static_cast<std::size_t>(k.ky.rows()) != sets.ly() || static_cast<std::size_t>(k.ky.cols()) != sets.ly())
        throw DimensionError("replica kernel '" + k.name + "' does not match the set sizes");
    }
    for (const auto& k : req.side) {
      if (static_cast<std::size_t>(k.gx.size()) != sets.lx() || static_cast<std::size_t>(k.ky.rows()) != sets.ly() ||
          static_cast<std::size_t>(k.ky.cols()) != sets.ly())
        throw DimensionError("side kernel '" + k.name + "' does not match the set sizes");
    }
    build_plans();
  }

  std::size_t leaves_per_draw() const { return leaves_; }
  std::size_t kernels() const { return req_.replica.size(); }

  DrawResult run(std::size_t outer) const {
    const auto root = rng::root_key(st_.seed, outer);
    const std::size_t r = sch_.r;
    Matrix gyx;
    if (st_.t > 0.0) {
      const Matrix g = draw_g(root, sets_.n(), sets_.m());
      gyx = sets_.x() * g.transpose() * sets_.y().transpose();
    } else {
      gyx = Matrix::Zero(static_cast<Eigen::Index>(sets_.lx()), static_cast<Eigen::Index>(sets_.ly()));
    }
    ProjectedNoise noise;
    noise.yb = Vector::Zero(static_cast<Eigen::Index>(sets_.ly()));
    noise.xc = Vector::Zero(static_cast<Eigen::Index>(sets_.lx()));
    add_keyed(root, r + 1, use_a(r + 1), use_b(r + 1), use_c(r + 1), noise);
    DrawResult out;
    node(r + 1, root, noise, gyx, out);
    return out;
  }

 private:
  bool use_a(std::size_t k) const { return req_.include_a && st_.t > 0.0 && coeffs_.a[k] != 0.0; }
  bool use_b(std::size_t k) const { return st_.t < 1.0 && coeffs_.b[k] != 0.0; }
  bool use_c(std::size_t k) const { return st_.t < 1.0 && coeffs_.c[k] != 0.0; }

  void build_plans() {
    const std::size_t r = sch_.r;
    plans_.assign(r + 1, LevelPlan{});
    bool below_active = false;
    leaves_ = 1;
    Matrix ly_factor, lx_factor;
    bool factors_ready = false;
    for (std::size_t k = 1; k <= r; ++k) {
      auto& p = plans_[k];
      p.use_a = use_a(k);
      p.use_b = use_b(k);
      p.use_c = use_c(k);
      const bool active = p.use_a || p.use_b || p.use_c;
      below_active = below_active || active;
      const std::size_t nk = st_.samples[k - 1];
      if (!below_active) {
        // This level and everything under it is deterministic: one node.
        p.count = 1;
        p.logw = 0.0;
        p.keyed = true;
      } else if (st_.mode == EstimatorMode::MonteCarlo) {
        p.count = nk;
        p.logw = -std::log(static_cast<double>(nk));
        p.keyed = true;
      } else {
        if (!factors_ready) {
          ly_factor = range_factor(sets_.y());
          lx_factor = range_factor(sets_.x());
          factors_ready = true;
        }
        build_quadrature(k, nk, ly_factor, lx_factor, p);
      }
      leaves_ *= p.count;
    }
    const double total = static_cast<double>(leaves_) * static_cast<double>(st_.outer());
    if (total > st_.max_leaf_evaluations) {
      std::ostringstream os;
      os << "nested sample budget exceeded: " << total << " leaf evaluations > cap " << st_.max_leaf_evaluations;
      throw BudgetError(os.str());
    }
  }

  void build_quadrature(std::size_t k, std::size_t nk, const Matrix& ly_factor, const Matrix& lx_factor,
                        LevelPlan& p) const {
    const std::size_t dy = p.use_b ? static_cast<std::size_t>(ly_factor.cols()) : 0;
    const std::size_t dx = p.use_c ? static_cast<std::size_t>(lx_factor.cols()) : 0;
    const std::size_t dim = (p.use_a ? 1 : 0) + dy + dx;
    if (dim > 3) {
      std::ostringstream os;
      os << "gauss-hermite mode needs effective dimension <= 3, level " << k << " has " << dim;
      throw ArgumentError(os.str());
    }
    const auto rule = gauss_hermite(nk);
    std::size_t total = 1;
    for (std::size_t d = 0; d < dim; ++d) total *= nk;
    p.keyed = false;
    p.count = total;
    p.fixed.resize(total);
    std::vector<std::size_t> digit(dim, 0);
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t rem = idx;
      double logw = 0.0;
      Vector z(static_cast<Eigen::Index>(dim));
      for (std::size_t d = 0; d < dim; ++d) {
        digit[d] = rem % nk;
        rem /= nk;
        z(static_cast<Eigen::Index>(d)) = rule.nodes[digit[d]];
        logw += std::log(rule.weights[digit[d]]);
      }
      LevelDraw& ld = p.fixed[idx];
      ld.logw = logw;
      std::size_t off = 0;
      if (p.use_a) ld.u4 = z(static_cast<Eigen::Index>(off++));
      ld.yu2 = Vector::Zero(static_cast<Eigen::Index>(sets_.ly()));
      ld.xh = Vector::Zero(static_cast<Eigen::Index>(sets_.lx()));
      if (dy > 0) {
        ld.yu2 = ly_factor * z.segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(dy));
        off += dy;
      }
      if (dx > 0) ld.xh = lx_factor * z.segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(dx));
    }
  }

  void add_keyed(std::uint64_t key, std::size_t k, bool a, bool b, bool c, ProjectedNoise& noise) const {
    if (a) noise.a += coeffs_.a[k] * draw_u4(key, k);
    if (b) noise.yb.noalias() += coeffs_.b[k] * (sets_.y() * draw_vector(key, k, rng::Component::U2, sets_.m()));
    if (c) noise.xc.noalias() += coeffs_.c[k] * (sets_.x() * draw_vector(key, k, rng::Component::H, sets_.n()));
  }

  void add_fixed(const LevelDraw& ld, std::size_t k, const LevelPlan& p, ProjectedNoise& noise) const {
    if (p.use_a) noise.a += coeffs_.a[k] * ld.u4;
    if (p.use_b) noise.yb.noalias() += coeffs_.b[k] * ld.yu2;
    if (p.use_c) noise.xc.noalias() += coeffs_.c[k] * ld.xh;
  }

  void leaf(const ProjectedNoise& noise, const Matrix& gyx, DrawResult& out) const {
    const Matrix d0 = assemble_d0(sets_.overlaps(), gyx, noise, st_.t);
    const double beta = st_.beta;
    const double s = st_.s;
    if (!req_.measures) {
      Vector logc(d0.rows());
      for (Eigen::Index i = 0; i < d0.rows(); ++i) logc(i) = logsumexp(beta * d0.row(i));
      out.log_zeta = logsumexp(s * logc);
      return;
    }
    Matrix rho(d0.rows(), d0.cols());
    Vector logc(d0.rows());
    for (Eigen::Index i = 0; i < d0.rows(); ++i) {
      const double mx = beta * d0.row(i).maxCoeff();
      rho.row(i) = (beta * d0.row(i).array() - mx).exp();
      const double sum = rho.row(i).sum();
      rho.row(i) /= sum;
      logc(i) = mx + std::log(sum);
    }
    out.log_zeta = logsumexp(s * logc);
    const Vector pi = row_marginal(logc, s);
    out.mu = pi.asDiagonal() * rho;
    const std::size_t kk = req_.replica.size();
    out.replica.assign((sch_.r + 1) * kk, 0.0);
    for (std::size_t j = 0; j < kk; ++j) out.replica[j] = replica_average(out.mu, req_.replica[j]);
    out.side.resize(req_.side.size());
    for (std::size_t j = 0; j < req_.side.size(); ++j) out.side[j] = side_average(pi, rho, req_.side[j]);
  }

  // Level-k node (k >= 1); `noise` already contains levels k..r+1.
  void node(std::size_t k, std::uint64_t key, const ProjectedNoise& noise, const Matrix& gyx, DrawResult& out) const {
    if (k == 1) {
      leaf(noise, gyx, out);
      return;
    }
    const std::size_t child_level = k - 1;
    const LevelPlan& plan = plans_[child_level];
    const double ratio = sch_.m[k - 1] / sch_.m[k - 2];
    const std::size_t kk = req_.replica.size();
    const std::size_t lower = (k - 1) * kk;  // replica entries k1 < k-1 come from below

    double top = -std::numeric_limits<double>::infinity();
    double total = 0.0;
    Matrix mu_acc;
    std::vector<double> rep_acc;
    std::vector<double> side_acc;
    if (req_.measures) {
      mu_acc = Matrix::Zero(static_cast<Eigen::Index>(sets_.lx()), static_cast<Eigen::Index>(sets_.ly()));
      rep_acc.assign(lower, 0.0);
      side_acc.assign(req_.side.size(), 0.0);
    }
    DrawResult child;
    ProjectedNoise child_noise;
    for (std::size_t j = 0; j < plan.count; ++j) {
      child_noise = noise;
      const std::uint64_t ckey = rng::child_key(key, j);
      double logw = plan.logw;
      if (plan.keyed) {
        add_keyed(ckey, child_level, plan.use_a, plan.use_b, plan.use_c, child_noise);
      } else {
        add_fixed(plan.fixed[j], child_level, plan, child_noise);
        logw = plan.fixed[j].logw;
      }
      node(child_level, ckey, child_noise, gyx, child);
      const double l = logw + ratio * child.log_zeta;
      if (l > top) {
        const double scale = std::isfinite(top) ? std::exp(top - l) : 0.0;
        total *= scale;
        if (req_.measures) {
          mu_acc *= scale;
          for (auto& v : rep_acc) v *= scale;
          for (auto& v : side_acc) v *= scale;
        }
        top = l;
      }
      const double w = std::exp(l - top);
      total += w;
      if (req_.measures) {
        mu_acc.noalias() += w * child.mu;
        for (std::size_t i = 0; i < lower; ++i) rep_acc[i] += w * child.replica[i];
        for (std::size_t i = 0; i < side_acc.size(); ++i) side_acc[i] += w * child.side[i];
      }
    }
    out.log_zeta = top + std::log(total);
    if (!req_.measures) return;
    out.mu = mu_acc / total;
    out.replica.assign((sch_.r + 1) * kk, 0.0);
    for (std::size_t i = 0; i < lower; ++i) out.replica[i] = rep_acc[i] / total;
    for (std::size_t j = 0; j < kk; ++j) out.replica[lower + j] = replica_average(out.mu, req_.replica[j]);
    out.side.resize(side_acc.size());
    for (std::size_t i = 0; i < side_acc.size(); ++i) out.side[i] = side_acc[i] / total;
  }

  const ConfigurationSets& sets_;
  const LiftingSchedule& sch_;
  const EvalSettings& st_;
  const TreeRequest& req_;
  DerivedCoefficients coeffs_;
  std::vector<LevelPlan> plans_;
  std::size_t leaves_ = 1;
};

}  // namespace detail

/// Evaluates every outer draw of the sample tree in parallel. Per-draw records
/// are stored by outer index, so downstream reductions are thread-count
/// invariant.
inline TreeResults run_tree(const ConfigurationSets& sets, const LiftingSchedule& sch, const EvalSettings& st,
                            const TreeRequest& req) {
  require_valid(sch);
  detail::TreeEvaluator ev(sets, sch, st, req);
  TreeResults res;
  res.r = sch.r;
  res.kernels = ev.kernels();
  res.leaves_per_draw = ev.leaves_per_draw();
  res.draws.resize(st.outer());
  parallel_for(st.outer(), st.threads, [&](std::size_t i) { res.draws[i] = ev.run(i); });
  return res;
}

}  // namespace sfl
