#pragma once

#include "sfda/dataset.hpp"
#include "sfda/mfpca.hpp"

#include <cstdint>
#include <vector>

namespace sfda {

/// Joint (scores, covariates) features, centred and whitened.
struct FeatureMatrix {
  MatrixXd rows;       // N x (M + q)
  VectorXd mean;
  MatrixXd whitener;   // symmetric pseudo-inverse square root of the covariance
  MatrixXd whitened;   // N x (M + q)

  /// Whitens an extra row with the fitted mean and whitener.
  VectorXd apply(const VectorXd& row) const { return whitener * (row - mean); }
};

FeatureMatrix build_features(const MatrixXd& scores, const MatrixXd& covariates);
/// Uses the first M_selected mFPC scores and the dataset covariates.
FeatureMatrix build_features(const MfpcaModel& model, const Dataset& dataset);

constexpr int kTrimmed = -1;

struct TrimmedKmeansOptions {
  int K = 2;
  double tau = 0.05;
  int restarts = 10;
  int max_iter = 100;
  std::uint64_t seed = 0;
};

struct ClusterModel {
  int K = 0;
  double tau = 0.0;
  std::vector<int> assignment;          // 0-based cluster or kTrimmed
  std::vector<int> nearest;             // nearest centroid for every point
  MatrixXd centroids;                   // K x dim
  std::vector<std::size_t> retained;
  std::vector<std::size_t> trimmed;
  double objective = 0.0;               // retained within-cluster SSQ
  int restart = 0;                      // winning restart index
  std::vector<double> ssq_history;      // trimmed objective per iteration of the winner
  int reseeds = 0;

  std::vector<std::size_t> members(int k) const;
};

/// Number of points trimmed out of n at rate tau: ceil(tau * n).
std::size_t trim_count(std::size_t n, double tau);

ClusterModel trimmed_kmeans(const MatrixXd& X, const TrimmedKmeansOptions& options);

/// Silhouette width of every retained point (NaN for trimmed points).
VectorXd silhouette(const MatrixXd& X, const ClusterModel& model);
double mean_silhouette(const MatrixXd& X, const ClusterModel& model);

struct KChoice {
  int K = 0;
  std::vector<std::pair<int, double>> widths;  // (K, mean silhouette)
};

KChoice choose_K(const MatrixXd& X, const std::vector<int>& K_range, const TrimmedKmeansOptions& base);

/// One cluster after the member-only refit.
struct ClusterFit {
  int cluster = 0;
  std::vector<std::size_t> subjects;   // dataset indices: retained members, then trimmed
  std::vector<bool> trimmed;           // parallel to subjects
  MfpcaModel model;                    // fitted on retained members only
  MatrixXd rho;                        // scores for every entry of `subjects`

  std::size_t retained_count() const;
};

std::vector<ClusterFit> cluster_refit(const Dataset& dataset, const ClusterModel& clusters,
                                      const EvalGrid& grid, const FpcaConfig& config,
                                      std::size_t min_size = 3);

/// Mean bootstrap Jaccard per original cluster.
VectorXd bootstrap_jaccard(const MatrixXd& X, const ClusterModel& model, int n_boot,
                           const TrimmedKmeansOptions& options);

}  // namespace sfda
