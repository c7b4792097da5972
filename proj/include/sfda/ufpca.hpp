#pragma once

#include "sfda/common.hpp"
#include "sfda/dataset.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sfda {

/// Equispaced working grid with trapezoid quadrature weights.
struct EvalGrid {
  VectorXd points;
  VectorXd weights;

  Index size() const { return points.size(); }
  double t_min() const { return points[0]; }
  double t_max() const { return points[points.size() - 1]; }
  /// Quadrature inner product of two curves on the grid.
  double inner(const VectorXd& f, const VectorXd& g) const { return (weights.array() * f.array() * g.array()).sum(); }
};

EvalGrid make_grid(double t_min, double t_max, Index G);
EvalGrid make_grid(const Dataset& dataset, Index G);

/// One subject's observations on a single dimension.
struct SubjectSeries {
  VectorXd t;
  VectorXd y;
};

/// Extracts dimension d of every subject, in dataset order.
std::vector<SubjectSeries> extract_dimension(const Dataset& dataset, std::size_t d);

/// Piecewise-linear interpolation of a grid curve at x (clamped at the ends).
double interpolate(const EvalGrid& grid, const VectorXd& curve, double x);

struct MeanFit {
  VectorXd curve;
  double bandwidth = 0.0;
};

/// Local-linear mean over pooled observations; bandwidth by GCV when unset.
MeanFit fit_mean(const std::vector<SubjectSeries>& series, const EvalGrid& grid,
                 std::optional<double> bandwidth = std::nullopt);

struct CovarianceFit {
  MatrixXd surface;       // G x G, symmetric
  double noise_var = 0.0;
  double bandwidth = 0.0;
};

/// Smooths off-diagonal raw covariances onto grid x grid and estimates the
/// noise variance from the diagonal excess over the middle half of the domain.
CovarianceFit fit_covariance(const std::vector<SubjectSeries>& series, const VectorXd& mean,
                             const EvalGrid& grid, double bandwidth);

struct EigenFit {
  VectorXd values;        // all retained positive eigenvalues, descending
  MatrixXd functions;     // rows: eigenfunctions, orthonormal under grid weights
  VectorXd fve;           // cumulative fraction of variance, per retained count
  Index K = 0;            // selected count
};

EigenFit eigendecompose(const MatrixXd& cov, const EvalGrid& grid, double fve_threshold, Index k_max);

struct UfpcaOptions {
  double fve_threshold = 0.95;
  Index k_max = 10;
  std::optional<double> mean_bandwidth;
  std::optional<double> cov_bandwidth;   // default: 1.5x the mean bandwidth
};

struct UfpcaModel {
  EvalGrid grid;
  VectorXd mean;
  VectorXd eigenvalues;     // K selected
  MatrixXd eigenfunctions;  // K x G
  double noise_var = 0.0;
  MatrixXd scores;          // N x K, column-centred
  VectorXd score_offset;    // subtracted from raw PACE scores during centring
  VectorXd fve;             // cumulative over all retained components
  double mean_bandwidth = 0.0;
  double cov_bandwidth = 0.0;

  Index K() const { return eigenvalues.size(); }
};

/// Raw (uncentred) PACE conditional expectation for one subject.
VectorXd pace_raw(const SubjectSeries& subject, const EvalGrid& grid, const VectorXd& mean,
                  const VectorXd& eigenvalues, const MatrixXd& eigenfunctions, double noise_var);

/// PACE scores for every subject, column-centred. `offset` receives the
/// subtracted column means.
MatrixXd pace_scores(const std::vector<SubjectSeries>& series, const EvalGrid& grid,
                     const VectorXd& mean, const VectorXd& eigenvalues,
                     const MatrixXd& eigenfunctions, double noise_var, VectorXd* offset = nullptr);

UfpcaModel fit_ufpca(const std::vector<SubjectSeries>& series, const EvalGrid& grid,
                     const UfpcaOptions& options = {});

/// Scores a subject that did not take part in the fit, on the fitted scale.
VectorXd score_subject(const UfpcaModel& model, const SubjectSeries& subject);

}  // namespace sfda
