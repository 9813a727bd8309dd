// Averages under the reweighted measures gamma01, gamma02 and gamma_{k1+1}.
#pragma once

#include "sfl/ensemble.hpp"
#include "sfl/errors.hpp"
#include "sfl/estimate.hpp"
#include "sfl/functionals.hpp"
#include "sfl/hamiltonian.hpp"
#include "sfl/sample_tree.hpp"
#include "sfl/schedule.hpp"
#include "sfl/settings.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <vector>

namespace sfl {

/// Sample form of one Phi operator: normalized weights
///   W_j = w_j zeta_j^ratio / sum_i w_i zeta_i^ratio
/// from child log values and child log prior weights.
struct MeasureWeights {
  std::vector<double> weights;
  double log_zeta = 0.0;
};

inline MeasureWeights phi_weights(std::span<const double> child_log_zeta, double ratio,
                                  std::span<const double> log_prior) {
  if (child_log_zeta.size() != log_prior.size() || child_log_zeta.empty())
    throw DimensionError("phi_weights: need one prior weight per child");
  Eigen::VectorXd l(static_cast<Eigen::Index>(child_log_zeta.size()));
  for (std::size_t j = 0; j < child_log_zeta.size(); ++j)
    l(static_cast<Eigen::Index>(j)) = log_prior[j] + ratio * child_log_zeta[j];
  // shift by the max and divide by the sum: exp(l - logsumexp) drifts from mass 1 when l is large
  const double top = l.maxCoeff();
  MeasureWeights mw;
  mw.weights.resize(child_log_zeta.size());
  double total = 0.0;
  for (std::size_t j = 0; j < mw.weights.size(); ++j)
    total += (mw.weights[j] = std::exp(l(static_cast<Eigen::Index>(j)) - top));
  for (auto& w : mw.weights) w /= total;
  mw.log_zeta = top + std::log(total);
  return mw;
}

inline std::vector<double> single_per_draw(const TreeResults& tree, const Matrix& f) {
  std::vector<double> v(tree.draws.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (f.rows() != tree.draws[i].mu.rows() || f.cols() != tree.draws[i].mu.cols())
      throw DimensionError("single-replica functional must be lx x ly");
    v[i] = single_average(tree.draws[i].mu, f);
  }
  return v;
}

inline std::vector<double> replica_per_draw(const TreeResults& tree, std::size_t k1, std::size_t kernel) {
  if (k1 > tree.r) throw ArgumentError("split level k1 must lie in 0..r");
  if (kernel >= tree.kernels) throw ArgumentError("replica kernel index out of range");
  std::vector<double> v(tree.draws.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = tree.replica(i, k1, kernel);
  return v;
}

inline std::vector<double> side_per_draw(const TreeResults& tree, std::size_t kernel) {
  std::vector<double> v(tree.draws.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = tree.draws[i].side.at(kernel);
  return v;
}

/// <f>_{gamma01} for a single-replica functional f(i1, i2) given as a table.
inline Estimate gamma_single_average(const ConfigurationSets& sets, const LiftingSchedule& sch,
                                     const EvalSettings& st, const Matrix& f) {
  if (static_cast<std::size_t>(f.rows()) != sets.lx() || static_cast<std::size_t>(f.cols()) != sets.ly())
    throw DimensionError("single-replica functional must be lx x ly");
  TreeRequest req;
  req.measures = true;
  const auto tree = run_tree(sets, sch, st, req);
  return jackknife_mean(single_per_draw(tree, f));
}

/// <gx(i1) ky(i2, p2)>_{gamma02}: two y-replicas sharing i1, each drawn from
/// the row-conditional weights of gamma0.
inline Estimate gamma02_average(const ConfigurationSets& sets, const LiftingSchedule& sch, const EvalSettings& st,
                                const SideKernel& f) {
  TreeRequest req;
  req.measures = true;
  req.side = {f};
  const auto tree = run_tree(sets, sch, st, req);
  return jackknife_mean(side_per_draw(tree, 0));
}

/// <f>_{gamma_{k1+1}} for f = kx(i1, p1) ky(i2, p2), 0 <= k1 <= r.
inline Estimate gamma_replica_average(const ConfigurationSets& sets, const LiftingSchedule& sch,
                                      const EvalSettings& st, const ReplicaKernel& f, std::size_t k1) {
  if (k1 > sch.r) {
    std::ostringstream os;
    os << "split level k1 = " << k1 << " outside 0.." << sch.r;
    throw ArgumentError(os.str());
  }
  TreeRequest req;
  req.measures = true;
  req.replica = {f};
  const auto tree = run_tree(sets, sch, st, req);
  return jackknife_mean(replica_per_draw(tree, k1, 0));
}

/// Per-draw total mass of every measure: entry [0] gamma01, [1] gamma02,
/// [2 + k1] gamma_{k1+1}.
inline std::vector<std::vector<double>> measure_mass_per_draw(const ConfigurationSets& sets,
                                                              const LiftingSchedule& sch, const EvalSettings& st) {
  TreeRequest req;
  req.measures = true;
  req.replica = {replica_ones(sets.lx(), sets.ly())};
  req.side = {side_ones(sets.lx(), sets.ly())};
  const auto tree = run_tree(sets, sch, st, req);
  const Matrix ones = Matrix::Ones(static_cast<Eigen::Index>(sets.lx()), static_cast<Eigen::Index>(sets.ly()));
  std::vector<std::vector<double>> out;
  out.push_back(single_per_draw(tree, ones));
  out.push_back(side_per_draw(tree, 0));
  for (std::size_t k1 = 0; k1 <= sch.r; ++k1) out.push_back(replica_per_draw(tree, k1, 0));
  return out;
}

}  // namespace sfl
