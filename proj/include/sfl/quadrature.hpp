#pragma once

#include "sfl/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <vector>

namespace sfl {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;  // sum to one
};

/// Gauss-Hermite rule for the standard normal density (Golub-Welsch on the
/// Jacobi matrix of the probabilists' Hermite polynomials).
inline QuadratureRule gauss_hermite(std::size_t count) {
  if (count < 1) throw ArgumentError("gauss_hermite: at least one node required");
  const auto n = static_cast<Eigen::Index>(count);
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 1; i < n; ++i) {
    jacobi(i, i - 1) = std::sqrt(static_cast<double>(i));
    jacobi(i - 1, i) = jacobi(i, i - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  QuadratureRule rule;
  rule.nodes.resize(count);
  rule.weights.resize(count);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    rule.nodes[i] = eig.eigenvalues()(i);
    rule.weights[i] = eig.eigenvectors()(0, i) * eig.eigenvectors()(0, i);
    total += rule.weights[i];
  }
  for (auto& w : rule.weights) w /= total;
  return rule;
}

}  // namespace sfl
