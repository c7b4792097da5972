#include "sfda/mfpca.hpp"

#include <algorithm>
#include <numeric>

namespace sfda {

std::vector<VectorXd> MfpcaModel::means() const {
  std::vector<VectorXd> out;
  out.reserve(per_dim.size());
  for (const auto& m : per_dim) out.push_back(m.mean);
  return out;
}

MfpcaModel fit_mfpca(std::vector<UfpcaModel> per_dim, double fve_threshold) {
  if (per_dim.empty()) throw ConfigError("mfpca needs at least one dimension");
  const Index N = per_dim.front().scores.rows();
  const Index G = per_dim.front().grid.size();
  if (N < 2) throw DataError("mfpca needs at least two subjects");
  MfpcaModel model;
  model.offsets.push_back(0);
  for (const auto& m : per_dim) {
    if (m.scores.rows() != N) throw DataError("subject-order mismatch across dimensions");
    if (m.grid.size() != G || (m.grid.points - per_dim.front().grid.points).cwiseAbs().maxCoeff() > 0) {
      throw DataError("per-dimension models use different grids");
    }
    model.offsets.push_back(model.offsets.back() + m.K());
  }
  const Index M = model.offsets.back();
  model.stacked.resize(N, M);
  for (std::size_t d = 0; d < per_dim.size(); ++d) {
    model.stacked.middleCols(model.offsets[d], per_dim[d].K()) = per_dim[d].scores;
  }

  const MatrixXd C = model.stacked.transpose() * model.stacked / static_cast<double>(N - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(C);
  if (solver.info() != Eigen::Success) throw Error("score covariance eigendecomposition failed");
  const VectorXd all_vals = solver.eigenvalues();
  const double top = all_vals.maxCoeff();
  if (!(top > 0)) throw DataError("degenerate score covariance");

  struct Pair {
    double value;
    VectorXd vec;
  };
  std::vector<Pair> pairs;
  for (Index m = 0; m < M; ++m) {
    if (all_vals[m] <= 1e-12 * top) continue;
    VectorXd v = solver.eigenvectors().col(m);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    pairs.push_back({all_vals[m], std::move(v)});
  }
  std::stable_sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
    if (std::abs(a.value - b.value) > 1e-12 * top) return a.value > b.value;
    for (Index k = 0; k < a.vec.size(); ++k) {
      if (a.vec[k] != b.vec[k]) return a.vec[k] > b.vec[k];
    }
    return false;
  });

  const Index Mp = static_cast<Index>(pairs.size());
  model.eigenvalues.resize(Mp);
  model.eigenvectors.resize(M, Mp);
  for (Index m = 0; m < Mp; ++m) {
    model.eigenvalues[m] = pairs[m].value;
    model.eigenvectors.col(m) = pairs[m].vec;
  }
  model.scores = model.stacked * model.eigenvectors;
  model.psi.assign(Mp, MatrixXd::Zero(static_cast<Index>(per_dim.size()), G));
  for (Index m = 0; m < Mp; ++m) {
    for (std::size_t d = 0; d < per_dim.size(); ++d) {
      const Index K = per_dim[d].K();
      model.psi[m].row(static_cast<Index>(d)) =
          model.eigenvectors.col(m).segment(model.offsets[d], K).transpose() * per_dim[d].eigenfunctions;
    }
  }
  model.per_dim = std::move(per_dim);
  select_M(model, fve_threshold);
  return model;
}

Index select_M(const VectorXd& eigenvalues, double fve_threshold) {
  if (!(fve_threshold > 0.0 && fve_threshold <= 1.0)) throw ConfigError("fve threshold must be in (0, 1]");
  const double total = eigenvalues.sum();
  double acc = 0.0;
  for (Index m = 0; m < eigenvalues.size(); ++m) {
    acc += eigenvalues[m];
    if (acc / total >= fve_threshold - 1e-12) return m + 1;
  }
  return eigenvalues.size();
}

Index select_M(MfpcaModel& model, double fve_threshold) {
  model.M_selected = select_M(model.eigenvalues, fve_threshold);
  return model.M_selected;
}

MatrixXd reconstruct(const MfpcaModel& model, const VectorXd& rho, Index M_prime,
                     const std::vector<VectorXd>& means) {
  if (M_prime < 1 || M_prime > model.components()) {
    throw ConfigError("M' = " + std::to_string(M_prime) + " outside [1, " +
                      std::to_string(model.components()) + "]");
  }
  if (means.size() != model.p()) throw ConfigError("mean curves do not match dimension count");
  const Index G = model.grid().size();
  MatrixXd out(static_cast<Index>(model.p()), G);
  for (std::size_t d = 0; d < model.p(); ++d) out.row(static_cast<Index>(d)) = means[d].transpose();
  for (Index m = 0; m < M_prime; ++m) out += rho[m] * model.psi[m];
  return out;
}

MatrixXd reconstruct(const MfpcaModel& model, Index i, Index M_prime) {
  return reconstruct(model, model.scores.row(i).transpose(), M_prime, model.means());
}

VectorXd score_new_subject(const MfpcaModel& model, const std::vector<SubjectSeries>& per_dim_series) {
  if (per_dim_series.size() != model.p()) throw DataError("subject dimension mismatch");
  VectorXd xi(model.stacked_dim());
  for (std::size_t d = 0; d < model.p(); ++d) {
    xi.segment(model.offsets[d], model.per_dim[d].K()) = score_subject(model.per_dim[d], per_dim_series[d]);
  }
  return model.eigenvectors.transpose() * xi;
}

MfpcaModel fit_dataset(const Dataset& dataset, const EvalGrid& grid, const FpcaConfig& config) {
  if (dataset.p == 0) throw DataError("dataset has no embedded dimensions");
  std::vector<UfpcaModel> per_dim;
  per_dim.reserve(dataset.p);
  for (std::size_t d = 0; d < dataset.p; ++d) {
    per_dim.push_back(fit_ufpca(extract_dimension(dataset, d), grid, config.ufpca));
  }
  return fit_mfpca(std::move(per_dim), config.mfpca_fve);
}

}  // namespace sfda
