#pragma once

// Interpolating curves through control values at uniform knots u_j = j/(M-1).
// Both kinds are linear in the control values, so a curve sampled at fixed
// parameters is a matrix (the basis) times the control matrix.

#include <algorithm>
#include <cmath>
#include <vector>

#include "stgeo/errors.hpp"

namespace stgeo {

enum class SplineKind { natural_cubic, linear };

class SplineBasis {
 public:
  SplineBasis() = default;

  /// Basis for `n_ctrl` control values sampled at s_n = n/(n_samples-1).
  SplineBasis(SplineKind kind, std::size_t n_ctrl, std::size_t n_samples) : n_ctrl_(n_ctrl), rows_(n_samples) {
    if (n_ctrl < 2) throw DomainError("spline needs at least 2 control values");
    if (n_samples < 2) throw DomainError("spline sampling needs at least 2 points");
    const auto m = kind == SplineKind::natural_cubic ? second_derivative_map(n_ctrl) : std::vector<double>{};
    w_.assign(n_samples * n_ctrl, 0.0);
    const double h = 1.0 / static_cast<double>(n_ctrl - 1);
    for (std::size_t n = 0; n < n_samples; ++n) {
      const double s = static_cast<double>(n) / static_cast<double>(n_samples - 1);
      double* row = &w_[n * n_ctrl];
      if (n == 0) { row[0] = 1.0; continue; }
      if (n + 1 == n_samples) { row[n_ctrl - 1] = 1.0; continue; }
      // Position in knot units; snapped so samples that land on knots hit them exactly.
      double pos = s * static_cast<double>(n_ctrl - 1);
      if (std::abs(pos - std::round(pos)) < 1e-9) pos = std::round(pos);
      const std::size_t i = std::min(static_cast<std::size_t>(pos), n_ctrl - 2);
      const double a = static_cast<double>(i + 1) - pos;  // weight toward knot i
      const double b = 1.0 - a;
      row[i] += a;
      row[i + 1] += b;
      if (kind == SplineKind::linear) continue;
      // Cubic correction: S = a y_i + b y_{i+1} + ((a^3 - a) M_i + (b^3 - b) M_{i+1}) h^2 / 6.
      const double ca = (a * a * a - a) * h * h / 6.0;
      const double cb = (b * b * b - b) * h * h / 6.0;
      for (std::size_t j = 0; j < n_ctrl; ++j) row[j] += ca * m[i * n_ctrl + j] + cb * m[(i + 1) * n_ctrl + j];
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return n_ctrl_; }
  double operator()(std::size_t n, std::size_t j) const { return w_[n * n_ctrl_ + j]; }

 private:
  /// Row-major (n x n) map from control values to knot second derivatives of the
  /// natural spline (M_0 = M_{n-1} = 0), by solving the tridiagonal system for each unit vector.
  static std::vector<double> second_derivative_map(std::size_t n) {
    std::vector<double> out(n * n, 0.0);
    if (n < 3) return out;
    const double h = 1.0 / static_cast<double>(n - 1);
    const std::size_t k = n - 2;  // interior unknowns
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<double> rhs(k, 0.0), c(k, 0.0), d(k, 0.0);
      for (std::size_t r = 0; r < k; ++r) {
        const std::size_t i = r + 1;
        const double yl = (i - 1 == j) ? 1.0 : 0.0, yc = (i == j) ? 1.0 : 0.0, yr = (i + 1 == j) ? 1.0 : 0.0;
        rhs[r] = 6.0 / (h * h) * (yl - 2.0 * yc + yr);
      }
      // Thomas algorithm for M_{i-1} + 4 M_i + M_{i+1} = rhs.
      c[0] = 1.0 / 4.0;
      d[0] = rhs[0] / 4.0;
      for (std::size_t r = 1; r < k; ++r) {
        const double denom = 4.0 - c[r - 1];
        c[r] = 1.0 / denom;
        d[r] = (rhs[r] - d[r - 1]) / denom;
      }
      for (std::size_t r = k; r-- > 0;) {
        const double mr = d[r] - (r + 1 < k ? c[r] * out[(r + 2) * n + j] : 0.0);
        out[(r + 1) * n + j] = mr;
      }
    }
    return out;
  }

  std::size_t n_ctrl_ = 0;
  std::size_t rows_ = 0;
  std::vector<double> w_;
};

}  // namespace stgeo
