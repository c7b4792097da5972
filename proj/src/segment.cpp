#include "sfda/segment.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace sfda {

FeatureMatrix build_features(const MatrixXd& scores, const MatrixXd& covariates) {
  const Index N = scores.rows();
  if (N < 2) throw DataError("need at least two subjects to build features");
  if (covariates.rows() != N && covariates.cols() != 0) throw DataError("covariates not aligned with scores");
  FeatureMatrix f;
  f.rows.resize(N, scores.cols() + covariates.cols());
  f.rows.leftCols(scores.cols()) = scores;
  if (covariates.cols() > 0) f.rows.rightCols(covariates.cols()) = covariates;
  f.mean = f.rows.colwise().mean().transpose();
  const MatrixXd centred = f.rows.rowwise() - f.mean.transpose();
  const MatrixXd cov = centred.transpose() * centred / static_cast<double>(N - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(cov);
  const VectorXd vals = solver.eigenvalues();
  const double top = vals.size() ? vals.maxCoeff() : 0.0;
  VectorXd inv_sqrt(vals.size());
  for (Index k = 0; k < vals.size(); ++k) {
    inv_sqrt[k] = (top > 0 && vals[k] > 1e-10 * top) ? 1.0 / std::sqrt(vals[k]) : 0.0;
  }
  f.whitener = solver.eigenvectors() * inv_sqrt.asDiagonal() * solver.eigenvectors().transpose();
  f.whitened = centred * f.whitener;
  return f;
}

FeatureMatrix build_features(const MfpcaModel& model, const Dataset& dataset) {
  const Index N = model.scores.rows();
  if (static_cast<std::size_t>(N) != dataset.size()) throw DataError("scores and dataset differ in subject count");
  MatrixXd Z(N, static_cast<Index>(dataset.q));
  for (Index i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < dataset.q; ++c) Z(i, static_cast<Index>(c)) = dataset.subjects[i].covariates[c];
  }
  return build_features(model.scores.leftCols(model.M_selected), Z);
}

std::vector<std::size_t> ClusterModel::members(int k) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == k) out.push_back(i);
  }
  return out;
}

std::size_t trim_count(std::size_t n, double tau) {
  return static_cast<std::size_t>(std::ceil(tau * static_cast<double>(n) - 1e-9));
}

namespace {

struct Assignment {
  std::vector<int> label;      // nearest centroid
  std::vector<double> dist2;
};

Assignment assign(const MatrixXd& X, const MatrixXd& C) {
  Assignment a;
  a.label.resize(X.rows());
  a.dist2.resize(X.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Index k = 0; k < C.rows(); ++k) {
      const double d = (X.row(i) - C.row(k)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(k);
      }
    }
    a.label[i] = arg;
    a.dist2[i] = best;
  }
  return a;
}

/// Marks the n_trim farthest points (ties broken by index) as trimmed.
std::vector<int> trim(const Assignment& a, std::size_t n_trim) {
  std::vector<int> label = a.label;
  if (n_trim == 0) return label;
  std::vector<std::size_t> order(label.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a.dist2[x] > a.dist2[y]; });
  for (std::size_t r = 0; r < n_trim; ++r) label[order[r]] = kTrimmed;
  return label;
}

double retained_ssq(const Assignment& a, const std::vector<int>& label) {
  double s = 0.0;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] != kTrimmed) s += a.dist2[i];
  }
  return s;
}

/// Centroids of retained points; empty clusters reseeded at the farthest retained point.
MatrixXd update_centroids(const MatrixXd& X, const std::vector<int>& label, const MatrixXd& old, int& reseeds) {
  MatrixXd C = MatrixXd::Zero(old.rows(), old.cols());
  VectorXd n = VectorXd::Zero(old.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    if (label[i] == kTrimmed) continue;
    C.row(label[i]) += X.row(i);
    n[label[i]] += 1;
  }
  for (Index k = 0; k < C.rows(); ++k) {
    if (n[k] > 0) C.row(k) /= n[k];
  }
  for (Index k = 0; k < C.rows(); ++k) {
    if (n[k] > 0) continue;
    double far = -1.0;
    Index arg = 0;
    for (Index i = 0; i < X.rows(); ++i) {
      if (label[i] == kTrimmed || n[label[i]] == 0) continue;
      const double d = (X.row(i) - C.row(label[i])).squaredNorm();
      if (d > far) {
        far = d;
        arg = i;
      }
    }
    C.row(k) = X.row(arg);
    n[k] = 1;
    ++reseeds;
    spdlog::debug("trimmed k-means: empty cluster {} reseeded at point {}", k, arg);
  }
  return C;
}

/// k-means++ seeding that ignores the n_trim points farthest from the current seeds.
MatrixXd kmeanspp(const MatrixXd& X, int K, std::size_t n_trim, std::mt19937_64& rng) {
  MatrixXd C(K, X.cols());
  std::uniform_int_distribution<Index> first(0, X.rows() - 1);
  C.row(0) = X.row(first(rng));
  std::vector<double> d2(X.rows());
  for (Index i = 0; i < X.rows(); ++i) d2[i] = (X.row(i) - C.row(0)).squaredNorm();
  for (int k = 1; k < K; ++k) {
    std::vector<double> w = d2;
    if (n_trim > 0) {
      std::vector<Index> order(w.size());
      std::iota(order.begin(), order.end(), Index{0});
      std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return d2[a] > d2[b]; });
      for (std::size_t j = 0; j < n_trim && j < order.size(); ++j) w[order[j]] = 0.0;
    }
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    Index pick = 0;
    if (total > 0) {
      std::discrete_distribution<Index> dist(w.begin(), w.end());
      pick = dist(rng);
    } else {
      pick = first(rng);
    }
    C.row(k) = X.row(pick);
    for (Index i = 0; i < X.rows(); ++i) d2[i] = std::min(d2[i], (X.row(i) - C.row(k)).squaredNorm());
  }
  return C;
}

ClusterModel single_restart(const MatrixXd& X, const TrimmedKmeansOptions& o, int r) {
  std::mt19937_64 rng(derive_seed(o.seed, "trimmed-kmeans", static_cast<std::uint64_t>(r)));
  const std::size_t n_trim = trim_count(static_cast<std::size_t>(X.rows()), o.tau);
  ClusterModel m;
  m.K = o.K;
  m.tau = o.tau;
  m.restart = r;
  MatrixXd C = kmeanspp(X, o.K, n_trim, rng);
  std::vector<int> label;
  for (int it = 0; it < o.max_iter; ++it) {
    const Assignment a = assign(X, C);
    std::vector<int> next = trim(a, n_trim);
    m.ssq_history.push_back(retained_ssq(a, next));
    const bool stable = next == label;
    label = std::move(next);
    C = update_centroids(X, label, C, m.reseeds);
    if (stable) break;
  }
  // Plain Lloyd on the retained set.
  for (int it = 0; it < o.max_iter; ++it) {
    Assignment a = assign(X, C);
    bool changed = false;
    for (std::size_t i = 0; i < label.size(); ++i) {
      if (label[i] == kTrimmed) continue;
      if (label[i] != a.label[i]) changed = true;
      label[i] = a.label[i];
    }
    C = update_centroids(X, label, C, m.reseeds);
    if (!changed) break;
  }
  const Assignment final_a = assign(X, C);
  m.centroids = C;
  m.assignment = label;
  m.nearest = final_a.label;
  m.objective = 0.0;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] == kTrimmed) {
      m.trimmed.push_back(i);
    } else {
      m.retained.push_back(i);
      m.objective += (X.row(static_cast<Index>(i)) - C.row(label[i])).squaredNorm();
    }
  }
  return m;
}

}  // namespace

ClusterModel trimmed_kmeans(const MatrixXd& X, const TrimmedKmeansOptions& o) {
  if (o.K < 1) throw ConfigError("K must be >= 1");
  if (!(o.tau >= 0.0 && o.tau < 1.0)) throw ConfigError("trim rate must be in [0, 1)");
  if (o.restarts < 1) throw ConfigError("restarts must be >= 1");
  const std::size_t N = static_cast<std::size_t>(X.rows());
  const std::size_t n_trim = trim_count(N, o.tau);
  if (n_trim >= N || N - n_trim < static_cast<std::size_t>(o.K)) {
    throw ConfigError("K = " + std::to_string(o.K) + " exceeds the retained count " +
                      std::to_string(N - std::min(N, n_trim)));
  }
  std::vector<ClusterModel> runs(static_cast<std::size_t>(o.restarts));
  parallel_for(runs.size(), worker_count(), [&](std::size_t r) { runs[r] = single_restart(X, o, static_cast<int>(r)); });
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].objective < runs[best].objective) best = r;
  }
  return std::move(runs[best]);
}

VectorXd silhouette(const MatrixXd& X, const ClusterModel& model) {
  const Index N = X.rows();
  VectorXd s = VectorXd::Constant(N, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> size(model.K, 0.0);
  for (std::size_t i : model.retained) size[model.assignment[i]] += 1;
  for (std::size_t i : model.retained) {
    const int own = model.assignment[i];
    if (size[own] <= 1) {
      s[static_cast<Index>(i)] = 0.0;
      continue;
    }
    std::vector<double> sum(model.K, 0.0);
    for (std::size_t j : model.retained) {
      if (j == i) continue;
      sum[model.assignment[j]] += (X.row(static_cast<Index>(i)) - X.row(static_cast<Index>(j))).norm();
    }
    const double a = sum[own] / (size[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int k = 0; k < model.K; ++k) {
      if (k != own && size[k] > 0) b = std::min(b, sum[k] / size[k]);
    }
    const double denom = std::max(a, b);
    s[static_cast<Index>(i)] = (std::isfinite(b) && denom > 0) ? (b - a) / denom : 0.0;
  }
  return s;
}

double mean_silhouette(const MatrixXd& X, const ClusterModel& model) {
  const VectorXd s = silhouette(X, model);
  double total = 0.0;
  for (std::size_t i : model.retained) total += s[static_cast<Index>(i)];
  return model.retained.empty() ? 0.0 : total / static_cast<double>(model.retained.size());
}

KChoice choose_K(const MatrixXd& X, const std::vector<int>& K_range, const TrimmedKmeansOptions& base) {
  if (K_range.empty()) throw ConfigError("empty K range");
  KChoice out;
  double best = -std::numeric_limits<double>::infinity();
  for (int K : K_range) {
    if (K < 2 || K > X.rows() - 1) throw ConfigError("K range must lie within {2..N-1}");
    TrimmedKmeansOptions o = base;
    o.K = K;
    const double width = mean_silhouette(X, trimmed_kmeans(X, o));
    out.widths.emplace_back(K, width);
    if (width > best) {
      best = width;
      out.K = K;
    }
  }
  return out;
}

std::size_t ClusterFit::retained_count() const {
  return static_cast<std::size_t>(std::count(trimmed.begin(), trimmed.end(), false));
}

std::vector<ClusterFit> cluster_refit(const Dataset& dataset, const ClusterModel& clusters,
                                      const EvalGrid& grid, const FpcaConfig& config,
                                      std::size_t min_size) {
  std::vector<ClusterFit> fits(static_cast<std::size_t>(clusters.K));
  for (int k = 0; k < clusters.K; ++k) {
    ClusterFit& fit = fits[static_cast<std::size_t>(k)];
    fit.cluster = k;
    for (std::size_t i = 0; i < clusters.assignment.size(); ++i) {
      if (clusters.assignment[i] == k) {
        fit.subjects.push_back(i);
        fit.trimmed.push_back(false);
      }
    }
    if (fit.subjects.size() < min_size) {
      throw DataError("cluster too small to refit: cluster " + std::to_string(k + 1) + " has " +
                      std::to_string(fit.subjects.size()) + " members");
    }
    fit.model = fit_dataset(dataset.subset(fit.subjects), grid, config);
    for (std::size_t i : clusters.trimmed) {
      if (clusters.nearest[i] == k) {
        fit.subjects.push_back(i);
        fit.trimmed.push_back(true);
      }
    }
    fit.rho.resize(static_cast<Index>(fit.subjects.size()), fit.model.components());
    const std::size_t n_ret = fit.retained_count();
    fit.rho.topRows(static_cast<Index>(n_ret)) = fit.model.scores;
    for (std::size_t r = n_ret; r < fit.subjects.size(); ++r) {
      const Dataset one = dataset.subset({fit.subjects[r]});
      std::vector<SubjectSeries> per_dim;
      for (std::size_t d = 0; d < dataset.p; ++d) per_dim.push_back(extract_dimension(one, d).front());
      fit.rho.row(static_cast<Index>(r)) = score_new_subject(fit.model, per_dim).transpose();
    }
  }
  return fits;
}

VectorXd bootstrap_jaccard(const MatrixXd& X, const ClusterModel& model, int n_boot,
                           const TrimmedKmeansOptions& options) {
  if (n_boot < 1) throw ConfigError("n_boot must be >= 1");
  const Index N = X.rows();
  const int K = model.K;
  MatrixXd per_boot = MatrixXd::Constant(n_boot, K, std::numeric_limits<double>::quiet_NaN());
  parallel_for(static_cast<std::size_t>(n_boot), worker_count(), [&](std::size_t b) {
    std::mt19937_64 rng(derive_seed(options.seed, "bootstrap-jaccard", b));
    std::uniform_int_distribution<Index> pick(0, N - 1);
    std::vector<Index> idx(static_cast<std::size_t>(N));
    for (auto& v : idx) v = pick(rng);
    MatrixXd Xb(N, X.cols());
    for (Index r = 0; r < N; ++r) Xb.row(r) = X.row(idx[static_cast<std::size_t>(r)]);
    TrimmedKmeansOptions o = options;
    o.K = K;
    o.tau = model.tau;
    o.seed = derive_seed(options.seed, "bootstrap-refit", b);
    const ClusterModel refit = trimmed_kmeans(Xb, o);
    // First occurrence of each original subject decides its new label.
    std::vector<int> new_label(static_cast<std::size_t>(N), kTrimmed - 1);
    for (Index r = 0; r < N; ++r) {
      auto& slot = new_label[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
      if (slot == kTrimmed - 1) slot = refit.assignment[static_cast<std::size_t>(r)];
    }
    for (int k = 0; k < K; ++k) {
      std::set<std::size_t> A;
      for (Index i = 0; i < N; ++i) {
        if (new_label[static_cast<std::size_t>(i)] != kTrimmed - 1 && model.assignment[static_cast<std::size_t>(i)] == k) {
          A.insert(static_cast<std::size_t>(i));
        }
      }
      if (A.empty()) continue;
      double best = 0.0;
      for (int c = 0; c < K; ++c) {
        std::size_t inter = 0, uni = A.size();
        for (Index i = 0; i < N; ++i) {
          if (new_label[static_cast<std::size_t>(i)] != c) continue;
          if (A.count(static_cast<std::size_t>(i))) {
            ++inter;
          } else {
            ++uni;
          }
        }
        best = std::max(best, static_cast<double>(inter) / static_cast<double>(uni));
      }
      per_boot(static_cast<Index>(b), k) = best;
    }
  });
  VectorXd out(K);
  for (int k = 0; k < K; ++k) {
    double s = 0.0;
    int n = 0;
    for (int b = 0; b < n_boot; ++b) {
      if (std::isnan(per_boot(b, k))) continue;
      s += per_boot(b, k);
      ++n;
    }
    out[k] = n ? s / n : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace sfda
