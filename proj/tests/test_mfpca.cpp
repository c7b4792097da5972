#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sfda/mfpca.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>

using namespace sfda;

namespace {

// K grid-orthonormal polynomial basis functions.
MatrixXd basis(const EvalGrid& grid, Index K) {
  MatrixXd b(K, grid.size());
  for (Index k = 0; k < K; ++k) b.row(k) = grid.points.array().pow(static_cast<double>(k)).transpose();
  for (Index k = 0; k < K; ++k) {
    for (Index j = 0; j < k; ++j) b.row(k) -= grid.inner(b.row(k), b.row(j)) * b.row(j);
    b.row(k) /= std::sqrt(grid.inner(b.row(k), b.row(k)));
  }
  return b;
}

MatrixXd centred(MatrixXd x) {
  x.rowwise() -= x.colwise().mean();
  return x;
}

UfpcaModel model_with_scores(const EvalGrid& grid, const MatrixXd& scores, double mean_level = 0.0) {
  UfpcaModel m;
  m.grid = grid;
  m.mean = VectorXd::Constant(grid.size(), mean_level);
  m.eigenfunctions = basis(grid, scores.cols());
  m.scores = scores;
  m.eigenvalues = (scores.transpose() * scores / static_cast<double>(scores.rows() - 1)).diagonal();
  m.score_offset = VectorXd::Zero(scores.cols());
  return m;
}

MatrixXd gaussian(Index n, Index k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  MatrixXd x(n, k);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < k; ++j) x(i, j) = z(rng);
  return x;
}

double xi_var_total(const MatrixXd& xi) { return xi.squaredNorm() / static_cast<double>(xi.rows() - 1); }

}  // namespace

TEST_CASE("select_M thresholds") {
  CHECK(select_M((VectorXd(2) << 9, 1).finished(), 0.9) == 1);
  CHECK(select_M((VectorXd(4) << 1, 1, 1, 1).finished(), 0.95) == 4);
  CHECK(select_M((VectorXd(3) << 3, 2, 1).finished(), 1.0) == 3);
  CHECK_THROWS_AS(select_M((VectorXd(1) << 1).finished(), 0.0), ConfigError);
}

TEST_CASE("uncorrelated stacked scores are a fixed point") {
  const EvalGrid grid = make_grid(0.0, 1.0, 31);
  // Exactly uncorrelated columns with variances 4 and 1.
  MatrixXd xi(4, 2);
  xi << 2, 1, -2, 1, 2, -1, -2, -1;
  xi *= std::sqrt(3.0 / 4.0);
  const MfpcaModel m = fit_mfpca({model_with_scores(grid, xi)}, 0.99);
  REQUIRE(m.components() == 2);
  CHECK(m.eigenvalues[0] == doctest::Approx(4.0));
  CHECK(m.eigenvalues[1] == doctest::Approx(1.0));
  CHECK((m.eigenvectors.cwiseAbs() - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((m.scores.cwiseAbs() - xi.cwiseAbs()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("random stacked scores match a dense eigensolver") {
  const EvalGrid grid = make_grid(0.0, 1.0, 31);
  const MatrixXd a = centred(gaussian(50, 3, 1) * (VectorXd(3) << 3, 2, 1).finished().asDiagonal());
  const MatrixXd b = centred(gaussian(50, 3, 2) + 0.5 * a);
  const MfpcaModel m = fit_mfpca({model_with_scores(grid, a), model_with_scores(grid, b)}, 0.9);
  MatrixXd xi(50, 6);
  xi << a, b;
  const MatrixXd C = xi.transpose() * xi / 49.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> oracle(C);
  const VectorXd nu = oracle.eigenvalues().reverse();
  REQUIRE(m.components() == 6);
  CHECK(m.stacked_dim() == 6);
  for (Index k = 0; k < 6; ++k) {
    CHECK(std::abs(m.eigenvalues[k] - nu[k]) < 1e-8 * nu[0]);
    const VectorXd v = oracle.eigenvectors().col(5 - k);
    CHECK(std::abs(std::abs(v.dot(m.eigenvectors.col(k))) - 1.0) < 1e-8);
    Index arg = 0;
    m.eigenvectors.col(k).cwiseAbs().maxCoeff(&arg);
    CHECK(m.eigenvectors(arg, k) > 0.0);
  }
  CHECK(std::abs(m.eigenvalues.sum() - C.trace()) < 1e-8 * C.trace());
  const MatrixXd cov = m.scores.transpose() * m.scores / 49.0;
  const MatrixXd off = cov - MatrixXd(cov.diagonal().asDiagonal());
  CHECK(off.cwiseAbs().maxCoeff() <= 1e-6 * m.eigenvalues[0]);
  for (Index i = 0; i < 6; ++i) {
    for (Index j = 0; j < 6; ++j) {
      double ip = 0.0;
      for (Index d = 0; d < 2; ++d) ip += grid.inner(m.psi[i].row(d).transpose(), m.psi[j].row(d).transpose());
      CHECK(std::abs(ip - (i == j ? 1.0 : 0.0)) < 1e-6);
    }
  }
  CHECK(m.M_selected == select_M(m.eigenvalues, 0.9));
}

TEST_CASE("rank-deficient score covariance drops zero eigenvalues") {
  const EvalGrid grid = make_grid(0.0, 1.0, 11);
  const MatrixXd a = centred(gaussian(3, 4, 9));
  const MfpcaModel m = fit_mfpca({model_with_scores(grid, a)}, 0.9);
  CHECK(m.components() == 2);
  CHECK(m.eigenvalues.minCoeff() > 0.0);
}

TEST_CASE("subject-count mismatch is an error") {
  const EvalGrid grid = make_grid(0.0, 1.0, 11);
  CHECK_THROWS_AS(fit_mfpca({model_with_scores(grid, centred(gaussian(10, 2, 1))),
                             model_with_scores(grid, centred(gaussian(11, 2, 2)))}),
                  DataError);
}

TEST_CASE("reconstruction: mean at zero scores, exact at full rank, nested errors") {
  const EvalGrid grid = make_grid(0.0, 1.0, 41);
  const MatrixXd a = centred(gaussian(40, 3, 4) * (VectorXd(3) << 3, 1.5, 0.5).finished().asDiagonal());
  const MatrixXd b = centred(gaussian(40, 2, 5));
  const MfpcaModel m = fit_mfpca({model_with_scores(grid, a, 1.0), model_with_scores(grid, b, -2.0)}, 0.9);
  const auto means = m.means();
  const MatrixXd at_zero = reconstruct(m, VectorXd::Zero(m.components()), m.components(), means);
  CHECK((at_zero.row(0).array() - 1.0).abs().maxCoeff() == 0.0);
  CHECK((at_zero.row(1).array() + 2.0).abs().maxCoeff() == 0.0);

  for (Index i : {0, 7, 39}) {
    MatrixXd truth(2, grid.size());
    truth.row(0) = (1.0 + (a.row(i) * m.per_dim[0].eigenfunctions).array()).matrix();
    truth.row(1) = (-2.0 + (b.row(i) * m.per_dim[1].eigenfunctions).array()).matrix();
    CHECK((reconstruct(m, i, m.components()) - truth).cwiseAbs().maxCoeff() < 1e-6);
    double prev = INFINITY;
    for (Index Mp = 1; Mp <= m.components(); ++Mp) {
      const MatrixXd r = reconstruct(m, i, Mp) - truth;
      double err = 0.0;
      for (Index d = 0; d < 2; ++d) err += grid.inner(r.row(d).transpose(), r.row(d).transpose());
      CHECK(err <= prev + 1e-12);
      prev = err;
    }
  }
  CHECK_THROWS_AS(reconstruct(m, 0, 0), ConfigError);
  CHECK_THROWS_AS(reconstruct(m, 0, m.components() + 1), ConfigError);
}

TEST_CASE("one dimension reduces to the univariate fit") {
  const EvalGrid grid = make_grid(0.0, 1.0, 51);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<SubjectSeries> series;
  for (int i = 0; i < 120; ++i) {
    const double s1 = 2.0 * z(rng), s2 = z(rng);
    SubjectSeries s{VectorXd(10), VectorXd(10)};
    for (int j = 0; j < 10; ++j) {
      const double t = u(rng);
      s.t[j] = t;
      s.y[j] = s1 * std::numbers::sqrt2 * std::sin(std::numbers::pi * t) +
               s2 * std::numbers::sqrt2 * std::cos(std::numbers::pi * t) + 0.05 * z(rng);
    }
    std::vector<std::pair<double, double>> tmp;
    for (int j = 0; j < 10; ++j) tmp.emplace_back(s.t[j], s.y[j]);
    std::sort(tmp.begin(), tmp.end());
    for (int j = 0; j < 10; ++j) std::tie(s.t[j], s.y[j]) = tmp[j];
    series.push_back(s);
  }
  const UfpcaModel u1 = fit_ufpca(series, grid);
  const MfpcaModel m = fit_mfpca({u1}, 0.9);
  REQUIRE(m.components() == u1.K());
  // Scores are an orthogonal rotation of the univariate scores.
  CHECK((m.scores.rowwise().norm() - u1.scores.rowwise().norm()).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(std::abs(m.eigenvalues.sum() - xi_var_total(u1.scores)) < 1e-8 * m.eigenvalues.sum());
  const VectorXd fresh = score_new_subject(m, {series[5]});
  CHECK((fresh - m.scores.row(5).transpose()).cwiseAbs().maxCoeff() < 1e-8);
}
