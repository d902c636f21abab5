#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "gwhf/errors.hpp"

namespace gwhf {

using NodeField = std::vector<double>;
using EdgeField = std::vector<double>;

// Minimal dense matrix, row major.  N stays single digit throughout, so no
// linear-algebra library is warranted.
struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> d;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return d[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return d[static_cast<size_t>(i) * cols + j]; }

  std::vector<double> apply(const std::vector<double>& x) const {
    std::vector<double> y(rows, 0.0);
    for (int i = 0; i < rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < cols; ++j) s += (*this)(i, j) * x[j];
      y[i] = s;
    }
    return y;
  }

  std::vector<double> apply_transposed(const std::vector<double>& x) const {
    std::vector<double> y(cols, 0.0);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) y[j] += (*this)(i, j) * x[i];
    return y;
  }
};

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// 17 significant digits: round-trips every double exactly.
inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Simplex membership check for a density vector.
inline void validate_density(const std::vector<double>& rho, double tol = 1e-10) {
  for (double x : rho)
    if (!(x >= 0.0)) throw InvalidInput("density has a negative or NaN component");
  if (std::abs(sum(rho) - 1.0) > tol)
    throw InvalidInput("density mass differs from 1 by more than " + fmt17(tol));
}

inline bool is_interior(const std::vector<double>& rho, double floor = 0.0) {
  for (double x : rho)
    if (!(x > floor)) return false;
  return true;
}

}  // namespace gwhf
