#pragma once

#include "sfda/ufpca.hpp"

#include <vector>

namespace sfda {

/// Multivariate FPCA assembled from stacked univariate scores.
struct MfpcaModel {
  std::vector<UfpcaModel> per_dim;
  std::vector<Index> offsets;   // column of Xi where dimension d starts; size p + 1
  MatrixXd stacked;             // Xi, N x M
  VectorXd eigenvalues;         // nu, positive, descending
  MatrixXd eigenvectors;        // M x M+, columns v_m
  std::vector<MatrixXd> psi;    // per component: p x G multivariate eigenfunction
  MatrixXd scores;              // rho, N x M+
  Index M_selected = 0;

  std::size_t p() const { return per_dim.size(); }
  Index stacked_dim() const { return offsets.empty() ? 0 : offsets.back(); }
  Index components() const { return eigenvalues.size(); }
  const EvalGrid& grid() const { return per_dim.front().grid; }
  std::vector<VectorXd> means() const;
};

/// Fits on per-dimension models that share subjects (same N, same order) and
/// one grid. Zero eigenvalues of the score covariance are dropped.
MfpcaModel fit_mfpca(std::vector<UfpcaModel> per_dim, double fve_threshold = 0.90);

/// Smallest M' whose cumulative share of sum(nu) reaches the threshold.
Index select_M(const VectorXd& eigenvalues, double fve_threshold);
Index select_M(MfpcaModel& model, double fve_threshold);

/// p x G reconstruction mu + sum_{m <= M'} rho_m psi_m with explicit means.
MatrixXd reconstruct(const MfpcaModel& model, const VectorXd& rho, Index M_prime,
                     const std::vector<VectorXd>& means);
/// Reconstruction of fitted subject i around the model's own mean curves.
MatrixXd reconstruct(const MfpcaModel& model, Index i, Index M_prime);

/// mFPC scores for a subject outside the fit; series holds one entry per dimension.
VectorXd score_new_subject(const MfpcaModel& model, const std::vector<SubjectSeries>& per_dim_series);

/// Per-dimension uFPCA followed by the multivariate step.
struct FpcaConfig {
  Index grid_size = 51;
  UfpcaOptions ufpca;
  double mfpca_fve = 0.90;
};

MfpcaModel fit_dataset(const Dataset& dataset, const EvalGrid& grid, const FpcaConfig& config);

}  // namespace sfda
