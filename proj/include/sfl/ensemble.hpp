// Finite configuration sets X (rows in R^n) and Y (rows in R^m) together with
// the cached geometry every formula reads: row norms and Gram matrices.
#pragma once

#include "sfl/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

namespace sfl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct OverlapTables {
  Vector xnorm;  // lx
  Vector ynorm;  // ly
  Matrix xdot;   // lx x lx Gram matrix
  Matrix ydot;   // ly x ly Gram matrix
};

class ConfigurationSets {
 public:
  ConfigurationSets() = default;

  const Matrix& x() const { return x_; }
  const Matrix& y() const { return y_; }
  const OverlapTables& overlaps() const { return tables_; }

  std::size_t n() const { return static_cast<std::size_t>(x_.cols()); }
  std::size_t m() const { return static_cast<std::size_t>(y_.cols()); }
  std::size_t lx() const { return static_cast<std::size_t>(x_.rows()); }
  std::size_t ly() const { return static_cast<std::size_t>(y_.rows()); }

  static ConfigurationSets build(Matrix x, Matrix y) {
    check_block(x, "X");
    check_block(y, "Y");
    ConfigurationSets s;
    s.x_ = std::move(x);
    s.y_ = std::move(y);
    s.tables_.xdot = s.x_ * s.x_.transpose();
    s.tables_.ydot = s.y_ * s.y_.transpose();
    s.tables_.xnorm = s.x_.rowwise().norm();
    s.tables_.ynorm = s.y_.rowwise().norm();
    // Exact agreement between the Gram diagonal and the squared norms.
    for (Eigen::Index i = 0; i < s.x_.rows(); ++i) s.tables_.xdot(i, i) = s.tables_.xnorm(i) * s.tables_.xnorm(i);
    for (Eigen::Index i = 0; i < s.y_.rows(); ++i) s.tables_.ydot(i, i) = s.tables_.ynorm(i) * s.tables_.ynorm(i);
    return s;
  }

  static ConfigurationSets build(const std::vector<std::vector<double>>& xrows,
                                 const std::vector<std::vector<double>>& yrows) {
    return build(from_rows(xrows, "X"), from_rows(yrows, "Y"));
  }

  // Brace literals would otherwise be ambiguous with Eigen's own list constructor.
  static ConfigurationSets build(std::initializer_list<std::initializer_list<double>> xrows,
                                 std::initializer_list<std::initializer_list<double>> yrows) {
    auto to_rows = [](auto rows) {
      std::vector<std::vector<double>> out;
      for (const auto& r : rows) out.emplace_back(r);
      return out;
    };
    return build(to_rows(xrows), to_rows(yrows));
  }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows, const char* name) {
    if (rows.empty()) throw DimensionError(std::string(name) + " must contain at least one row");
    const std::size_t width = rows.front().size();
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != width) {
        std::ostringstream os;
        os << name << " row " << i << " has length " << rows[i].size() << ", expected " << width;
        throw DimensionError(os.str());
      }
      for (std::size_t j = 0; j < width; ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return out;
  }

 private:
  static void check_block(const Matrix& a, const char* name) {
    if (a.rows() < 1 || a.cols() < 1) throw DimensionError(std::string(name) + " must be non-empty");
    if (!a.allFinite()) throw DimensionError(std::string(name) + " contains a non-finite entry");
  }

  Matrix x_;
  Matrix y_;
  OverlapTables tables_;
};

struct UnitNormFlags {
  bool x = false;
  bool y = false;
  bool both() const { return x && y; }
};

inline constexpr double kUnitNormTolerance = 1e-9;

inline UnitNormFlags is_unit_norm(const ConfigurationSets& sets) {
  auto unit = [](const Vector& v) { return ((v.array() - 1.0).abs() <= kUnitNormTolerance).all(); };
  return {unit(sets.overlaps().xnorm), unit(sets.overlaps().ynorm)};
}

/// Whitespace-separated numeric matrix, one row per line. Blank lines and
/// lines starting with '#' are skipped.
inline Matrix parse_matrix_text(std::istream& in, const char* name = "matrix") {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw DimensionError(std::string(name) + ": cannot parse number '" + tok + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  return ConfigurationSets::from_rows(rows, name);
}

inline Matrix load_matrix_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open matrix file: " + path);
  return parse_matrix_text(in, path.c_str());
}

}  // namespace sfl
