#include "sfda/ufpca.hpp"

#include "sfda/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace sfda {

EvalGrid make_grid(double t_min, double t_max, Index G) {
  if (G < 2) throw ConfigError("grid needs at least 2 points");
  if (!(t_min < t_max)) throw DataError("degenerate time domain: t_min == t_max");
  EvalGrid grid;
  grid.points = VectorXd::LinSpaced(G, t_min, t_max);
  grid.points[G - 1] = t_max;
  const double step = (t_max - t_min) / static_cast<double>(G - 1);
  grid.weights = VectorXd::Constant(G, step);
  grid.weights[0] = grid.weights[G - 1] = step / 2.0;
  return grid;
}

EvalGrid make_grid(const Dataset& dataset, Index G) { return make_grid(dataset.t_min, dataset.t_max, G); }

std::vector<SubjectSeries> extract_dimension(const Dataset& dataset, std::size_t d) {
  if (d >= dataset.p) throw ConfigError("dimension out of range");
  std::vector<SubjectSeries> out;
  out.reserve(dataset.size());
  for (const auto& subject : dataset.subjects) {
    SubjectSeries s;
    s.t.resize(static_cast<Index>(subject.size()));
    s.y.resize(static_cast<Index>(subject.size()));
    for (std::size_t j = 0; j < subject.size(); ++j) {
      const auto& obs = subject.records[j];
      if (obs.y.size() != dataset.p) {
        throw DataError("subject '" + subject.subject_id + "' has unembedded records");
      }
      s.t[static_cast<Index>(j)] = obs.t;
      s.y[static_cast<Index>(j)] = obs.y[d];
    }
    out.push_back(std::move(s));
  }
  return out;
}

double interpolate(const EvalGrid& grid, const VectorXd& curve, double x) {
  const Index G = grid.size();
  if (x <= grid.points[0]) return curve[0];
  if (x >= grid.points[G - 1]) return curve[G - 1];
  const double step = (grid.t_max() - grid.t_min()) / static_cast<double>(G - 1);
  Index g = std::min<Index>(static_cast<Index>((x - grid.t_min()) / step), G - 2);
  while (g > 0 && grid.points[g] > x) --g;
  while (g < G - 2 && grid.points[g + 1] < x) ++g;
  const double w = (x - grid.points[g]) / (grid.points[g + 1] - grid.points[g]);
  return (1.0 - w) * curve[g] + w * curve[g + 1];
}

MeanFit fit_mean(const std::vector<SubjectSeries>& series, const EvalGrid& grid,
                 std::optional<double> bandwidth) {
  std::vector<std::pair<double, double>> pairs;
  for (const auto& s : series) {
    for (Index j = 0; j < s.t.size(); ++j) pairs.emplace_back(s.t[j], s.y[j]);
  }
  const Design1D design = Design1D::from_pairs(std::move(pairs));
  if (design.size() < 2) throw DataError("mean not identifiable: all observations at one timestamp");
  MeanFit fit;
  fit.bandwidth = bandwidth ? *bandwidth : select_bandwidth_gcv(design, grid.t_min(), grid.t_max());
  if (!(fit.bandwidth > 0)) throw ConfigError("bandwidth must be positive");
  fit.curve = local_linear(design, grid.points, fit.bandwidth);
  return fit;
}

CovarianceFit fit_covariance(const std::vector<SubjectSeries>& series, const VectorXd& mean,
                             const EvalGrid& grid, double bandwidth) {
  if (!(bandwidth > 0)) throw ConfigError("bandwidth must be positive");
  std::map<std::pair<double, double>, std::pair<double, double>> cells;
  std::vector<std::pair<double, double>> diag;
  bool any_pair = false;
  for (const auto& s : series) {
    const Index n = s.t.size();
    VectorXd resid(n);
    for (Index j = 0; j < n; ++j) resid[j] = s.y[j] - interpolate(grid, mean, s.t[j]);
    for (Index j = 0; j < n; ++j) {
      diag.emplace_back(s.t[j], resid[j] * resid[j]);
      for (Index l = 0; l < n; ++l) {
        if (l == j) continue;
        auto& cell = cells[{s.t[j], s.t[l]}];
        cell.first += 1.0;
        cell.second += resid[j] * resid[l];
      }
    }
    any_pair = any_pair || n >= 2;
  }
  if (!any_pair) throw DataError("covariance not identifiable: no subject with >= 2 observations");

  Design2D design;
  design.s.reserve(cells.size());
  for (const auto& [key, value] : cells) {
    design.s.push_back(key.first);
    design.t.push_back(key.second);
    design.count.push_back(value.first);
    design.sum.push_back(value.second);
  }
  CovarianceFit fit;
  fit.bandwidth = bandwidth;
  const MatrixXd raw = local_linear_surface(design, grid.points, bandwidth);
  fit.surface = 0.5 * (raw + raw.transpose());

  const Design1D diag_design = Design1D::from_pairs(std::move(diag));
  const VectorXd v = local_linear(diag_design, grid.points, bandwidth);
  const double lo = grid.t_min() + 0.25 * (grid.t_max() - grid.t_min());
  const double hi = grid.t_max() - 0.25 * (grid.t_max() - grid.t_min());
  // Trapezoid integral of V - G(t,t) restricted to [lo, hi].
  const VectorXd diff = v - fit.surface.diagonal();
  double integral = 0.0;
  for (Index g = 0; g + 1 < grid.size(); ++g) {
    const double a = std::max(grid.points[g], lo);
    const double b = std::min(grid.points[g + 1], hi);
    if (b <= a) continue;
    const double fa = interpolate(grid, diff, a);
    const double fb = interpolate(grid, diff, b);
    integral += 0.5 * (fa + fb) * (b - a);
  }
  fit.noise_var = std::max(0.0, 2.0 / (grid.t_max() - grid.t_min()) * integral);
  return fit;
}

EigenFit eigendecompose(const MatrixXd& cov, const EvalGrid& grid, double fve_threshold, Index k_max) {
  if (!(fve_threshold > 0.0 && fve_threshold <= 1.0)) throw ConfigError("fve threshold must be in (0, 1]");
  if (k_max < 1) throw ConfigError("k_max must be >= 1");
  const VectorXd sw = grid.weights.array().sqrt();
  const MatrixXd A = sw.asDiagonal() * (0.5 * (cov + cov.transpose())) * sw.asDiagonal();
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(A);
  if (solver.info() != Eigen::Success) throw Error("eigendecomposition failed");
  const VectorXd vals = solver.eigenvalues().reverse();
  const MatrixXd vecs = solver.eigenvectors().rowwise().reverse();
  if (!(vals[0] > 1e-12 * vals.cwiseAbs().maxCoeff())) throw DataError("degenerate covariance: no positive eigenvalue");

  Index kept = 0;
  while (kept < vals.size() && vals[kept] > 1e-12 * vals[0]) ++kept;
  EigenFit fit;
  fit.values = vals.head(kept);
  fit.functions.resize(kept, grid.size());
  for (Index k = 0; k < kept; ++k) {
    VectorXd phi = vecs.col(k).array() / sw.array();
    phi /= std::sqrt(grid.inner(phi, phi));
    Index arg = 0;
    phi.cwiseAbs().maxCoeff(&arg);
    if (phi[arg] < 0) phi = -phi;
    fit.functions.row(k) = phi.transpose();
  }
  fit.fve.resize(kept);
  const double total = fit.values.sum();
  double acc = 0.0;
  fit.K = kept;
  for (Index k = 0; k < kept; ++k) {
    acc += fit.values[k];
    fit.fve[k] = acc / total;
  }
  for (Index k = 0; k < kept; ++k) {
    if (fit.fve[k] >= fve_threshold - 1e-12) {
      fit.K = k + 1;
      break;
    }
  }
  fit.K = std::min(fit.K, k_max);
  return fit;
}

VectorXd pace_raw(const SubjectSeries& subject, const EvalGrid& grid, const VectorXd& mean,
                  const VectorXd& eigenvalues, const MatrixXd& eigenfunctions, double noise_var) {
  const Index n = subject.t.size();
  const Index K = eigenvalues.size();
  if (n == 0) throw DataError("subject has no observations");
  MatrixXd Phi(n, K);
  VectorXd resid(n);
  for (Index j = 0; j < n; ++j) {
    resid[j] = subject.y[j] - interpolate(grid, mean, subject.t[j]);
    for (Index k = 0; k < K; ++k) Phi(j, k) = interpolate(grid, eigenfunctions.row(k).transpose(), subject.t[j]);
  }
  MatrixXd Sigma = Phi * eigenvalues.asDiagonal() * Phi.transpose();
  Sigma.diagonal().array() += noise_var;
  Eigen::LDLT<MatrixXd> ldlt(Sigma);
  if (noise_var <= 0.0 && (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12)) {
    Sigma.diagonal().array() += 1e-8 * eigenvalues[0];
    ldlt.compute(Sigma);
  }
  return eigenvalues.asDiagonal() * (Phi.transpose() * ldlt.solve(resid));
}

MatrixXd pace_scores(const std::vector<SubjectSeries>& series, const EvalGrid& grid,
                     const VectorXd& mean, const VectorXd& eigenvalues,
                     const MatrixXd& eigenfunctions, double noise_var, VectorXd* offset) {
  MatrixXd scores(static_cast<Index>(series.size()), eigenvalues.size());
  parallel_for(series.size(), worker_count(), [&](std::size_t i) {
    scores.row(static_cast<Index>(i)) =
        pace_raw(series[i], grid, mean, eigenvalues, eigenfunctions, noise_var).transpose();
  });
  const VectorXd centre = scores.colwise().mean().transpose();
  scores.rowwise() -= centre.transpose();
  if (offset) *offset = centre;
  return scores;
}

UfpcaModel fit_ufpca(const std::vector<SubjectSeries>& series, const EvalGrid& grid,
                     const UfpcaOptions& options) {
  if (series.empty()) throw DataError("no subjects to fit");
  UfpcaModel model;
  model.grid = grid;
  const MeanFit mean = fit_mean(series, grid, options.mean_bandwidth);
  model.mean = mean.curve;
  model.mean_bandwidth = mean.bandwidth;
  model.cov_bandwidth = options.cov_bandwidth ? *options.cov_bandwidth : 1.5 * mean.bandwidth;
  const CovarianceFit cov = fit_covariance(series, model.mean, grid, model.cov_bandwidth);
  model.noise_var = cov.noise_var;
  const EigenFit eig = eigendecompose(cov.surface, grid, options.fve_threshold, options.k_max);
  model.eigenvalues = eig.values.head(eig.K);
  model.eigenfunctions = eig.functions.topRows(eig.K);
  model.fve = eig.fve;
  model.scores = pace_scores(series, grid, model.mean, model.eigenvalues, model.eigenfunctions,
                             model.noise_var, &model.score_offset);
  return model;
}

VectorXd score_subject(const UfpcaModel& model, const SubjectSeries& subject) {
  return pace_raw(subject, model.grid, model.mean, model.eigenvalues, model.eigenfunctions,
                  model.noise_var) -
         model.score_offset;
}

}  // namespace sfda
