// Overlap functionals averaged by the gamma measures.
//
// Two-replica functionals are products f = kx(i1, p1) * ky(i2, p2); every
// functional appearing in the derivative formulas has this shape. Functionals
// of the two y-replicas sharing i1 are f = gx(i1) * ky(i2, p2).
#pragma once

#include "sfl/ensemble.hpp"

#include <string>
#include <vector>

namespace sfl {

struct ReplicaKernel {
  Matrix kx;  // lx x lx
  Matrix ky;  // ly x ly
  std::string name;
};

struct SideKernel {
  Vector gx;  // lx
  Matrix ky;  // ly x ly
  std::string name;
};

inline Matrix norm_outer(const Vector& v) { return v * v.transpose(); }

/// ||x|| ||x'|| ||y|| ||y'||
inline ReplicaKernel norm_product(const OverlapTables& ov) {
  return {norm_outer(ov.xnorm), norm_outer(ov.ynorm), "norm-product"};
}

/// ||x|| ||x'|| y'^T y
inline ReplicaKernel y_overlap_x_norms(const OverlapTables& ov) {
  return {norm_outer(ov.xnorm), ov.ydot, "y-overlap-x-norms"};
}

/// x'^T x ||y|| ||y'||
inline ReplicaKernel x_overlap_y_norms(const OverlapTables& ov) {
  return {ov.xdot, norm_outer(ov.ynorm), "x-overlap-y-norms"};
}

/// x'^T x y'^T y
inline ReplicaKernel full_overlap(const OverlapTables& ov) { return {ov.xdot, ov.ydot, "full-overlap"}; }

inline ReplicaKernel replica_ones(std::size_t lx, std::size_t ly) {
  return {Matrix::Ones(static_cast<Eigen::Index>(lx), static_cast<Eigen::Index>(lx)),
          Matrix::Ones(static_cast<Eigen::Index>(ly), static_cast<Eigen::Index>(ly)), "one"};
}

// Positions of the four basic kernels in basic_replica_kernels().
inline constexpr std::size_t kNormProduct = 0;
inline constexpr std::size_t kYOverlap = 1;
inline constexpr std::size_t kXOverlap = 2;
inline constexpr std::size_t kFullOverlap = 3;

inline std::vector<ReplicaKernel> basic_replica_kernels(const OverlapTables& ov) {
  return {norm_product(ov), y_overlap_x_norms(ov), x_overlap_y_norms(ov), full_overlap(ov)};
}

/// ||x||^2 y'^T y
inline SideKernel x_norm2_y_overlap(const OverlapTables& ov) {
  return {ov.xnorm.array().square().matrix(), ov.ydot, "x-norm2-y-overlap"};
}

/// ||x||^2 ||y|| ||y'||
inline SideKernel x_norm2_y_norms(const OverlapTables& ov) {
  return {ov.xnorm.array().square().matrix(), norm_outer(ov.ynorm), "x-norm2-y-norms"};
}

inline SideKernel side_ones(std::size_t lx, std::size_t ly) {
  return {Vector::Ones(static_cast<Eigen::Index>(lx)),
          Matrix::Ones(static_cast<Eigen::Index>(ly), static_cast<Eigen::Index>(ly)), "one"};
}

inline constexpr std::size_t kSideOverlap = 0;
inline constexpr std::size_t kSideNorms = 1;

inline std::vector<SideKernel> basic_side_kernels(const OverlapTables& ov) {
  return {x_norm2_y_overlap(ov), x_norm2_y_norms(ov)};
}

/// ||x||^2 ||y||^2 as an lx x ly table of single-replica values.
inline Matrix norm_squared_product(const OverlapTables& ov) {
  return ov.xnorm.array().square().matrix() * ov.ynorm.array().square().matrix().transpose();
}

/// sum over (i1, i2, p1, p2) of mu(i1, i2) mu(p1, p2) kx(i1, p1) ky(i2, p2).
inline double replica_average(const Matrix& mu, const ReplicaKernel& k) {
  const Matrix s = mu * k.ky * mu.transpose();
  return (k.kx.array() * s.array()).sum();
}

/// sum over (i1, i2, p2) of pi(i1) rho(i2 | i1) rho(p2 | i1) gx(i1) ky(i2, p2).
inline double side_average(const Vector& pi, const Matrix& rho, const SideKernel& k) {
  const Vector per_row = ((rho * k.ky).array() * rho.array()).rowwise().sum();
  return (pi.array() * k.gx.array() * per_row.array()).sum();
}

inline double single_average(const Matrix& mu, const Matrix& f) { return (mu.array() * f.array()).sum(); }

}  // namespace sfl
