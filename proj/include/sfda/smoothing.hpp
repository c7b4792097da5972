#pragma once

#include "sfda/common.hpp"

#include <optional>
#include <vector>

namespace sfda {

inline double epanechnikov(double u) { return std::abs(u) < 1.0 ? 0.75 * (1.0 - u * u) : 0.0; }

/// Scatter collapsed onto its unique design points. Local-linear fits only
/// depend on per-point counts and sums, which keeps GCV exact and cheap.
struct Design1D {
  std::vector<double> t;       // strictly increasing
  std::vector<double> count;
  std::vector<double> sum_y;
  std::vector<double> sum_y2;

  std::size_t size() const { return t.size(); }
  double total() const;
  static Design1D from_pairs(std::vector<std::pair<double, double>> pairs);
};

/// Local-linear Epanechnikov estimate at x. When fewer than two distinct
/// design points carry weight the bandwidth is doubled until they do.
double local_linear(const Design1D& design, double x, double bandwidth);

/// Evaluates the smoother on every point of `xs`.
VectorXd local_linear(const Design1D& design, const VectorXd& xs, double bandwidth);

/// GCV score (RSS/n) / (1 - tr(L)/n)^2 of the smoother at the design points.
double gcv_score(const Design1D& design, double bandwidth);

/// 10-point logarithmic grid from 1.5x the median spacing to half the range.
std::vector<double> bandwidth_candidates(const Design1D& design, double t_min, double t_max);

/// Bandwidth minimising GCV over `bandwidth_candidates`; ties go to the
/// larger bandwidth.
double select_bandwidth_gcv(const Design1D& design, double t_min, double t_max);

/// Raw-covariance scatter on unique (s, t) cells.
struct Design2D {
  std::vector<double> s, t, count, sum;  // sorted by s, then t

  std::size_t size() const { return s.size(); }
};

/// Product-Epanechnikov local-linear surface evaluated on grid x grid.
/// Points with a singular local design double their bandwidth locally.
MatrixXd local_linear_surface(const Design2D& design, const VectorXd& grid, double bandwidth);

}  // namespace sfda
