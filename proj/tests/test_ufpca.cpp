#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sfda/smoothing.hpp"
#include "sfda/ufpca.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>

using namespace sfda;

namespace {

constexpr double kPi = std::numbers::pi;

SubjectSeries on_grid(const EvalGrid& grid, const std::function<double(double)>& f) {
  SubjectSeries s{grid.points, VectorXd(grid.size())};
  for (Index g = 0; g < grid.size(); ++g) s.y[g] = f(grid.points[g]);
  return s;
}

bool interior(const EvalGrid& grid, Index g, double keep) {
  const double span = grid.t_max() - grid.t_min();
  const double lo = grid.t_min() + 0.5 * (1.0 - keep) * span;
  const double hi = grid.t_max() - 0.5 * (1.0 - keep) * span;
  return grid.points[g] >= lo && grid.points[g] <= hi;
}

}  // namespace

TEST_CASE("grid points and trapezoid weights") {
  const EvalGrid g = make_grid(0.0, 10.0, 11);
  for (Index i = 0; i < 11; ++i) CHECK(g.points[i] == doctest::Approx(static_cast<double>(i)));
  CHECK(g.weights[0] == doctest::Approx(0.5));
  CHECK(g.weights[5] == doctest::Approx(1.0));
  CHECK(g.weights[10] == doctest::Approx(0.5));
  const EvalGrid two = make_grid(0.0, 1.0, 2);
  CHECK(two.weights[0] == doctest::Approx(0.5));
  CHECK(two.weights[1] == doctest::Approx(0.5));
  CHECK_THROWS_AS(make_grid(1.0, 1.0, 5), DataError);
  CHECK_THROWS_AS(make_grid(0.0, 1.0, 1), ConfigError);
}

TEST_CASE("kernel and bandwidth candidates") {
  CHECK(epanechnikov(0.0) == 0.75);
  CHECK(epanechnikov(1.0) == 0.0);
  CHECK(epanechnikov(-0.5) == doctest::Approx(0.5625));
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i <= 100; ++i) pairs.emplace_back(i / 100.0, 0.0);
  const auto design = Design1D::from_pairs(pairs);
  const auto h = bandwidth_candidates(design, 0.0, 1.0);
  REQUIRE(h.size() == 10);
  CHECK(h.front() == doctest::Approx(0.015));
  CHECK(h.back() == doctest::Approx(0.5));
  CHECK(h[1] / h[0] == doctest::Approx(h[9] / h[8]));
}

TEST_CASE("mean smoother reproduces constants and lines") {
  const EvalGrid grid = make_grid(0.0, 1.0, 51);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SubjectSeries> c, l;
  for (int i = 0; i < 20; ++i) {
    SubjectSeries s{VectorXd(6), VectorXd(6)};
    for (int j = 0; j < 6; ++j) s.t[j] = u(rng);
    SubjectSeries a = s, b = s;
    a.y.setConstant(2.5);
    b.y = s.t;
    c.push_back(a);
    l.push_back(b);
  }
  for (double h : {0.05, 0.2}) {
    const VectorXd mc = fit_mean(c, grid, h).curve;
    CHECK((mc.array() - 2.5).abs().maxCoeff() < 1e-10);
    const VectorXd ml = fit_mean(l, grid, h).curve;
    for (Index g = 0; g < grid.size(); ++g) {
      if (interior(grid, g, 0.9)) CHECK(std::abs(ml[g] - grid.points[g]) < 1e-8);
    }
  }
  const MeanFit auto_fit = fit_mean(c, grid);
  CHECK(auto_fit.bandwidth > 0.0);
}

TEST_CASE("auto bandwidth recovers a sine within 0.1") {
  const EvalGrid grid = make_grid(0.0, 1.0, 51);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 0.1);
  std::vector<SubjectSeries> series;
  for (int i = 0; i < 100; ++i) {
    SubjectSeries s{VectorXd(5), VectorXd(5)};
    for (int j = 0; j < 5; ++j) {
      s.t[j] = u(rng);
      s.y[j] = std::sin(2 * kPi * s.t[j]) + z(rng);
    }
    series.push_back(s);
  }
  const VectorXd m = fit_mean(series, grid).curve;
  double err = 0.0;
  for (Index g = 0; g < grid.size(); ++g) {
    if (interior(grid, g, 0.8)) err = std::max(err, std::abs(m[g] - std::sin(2 * kPi * grid.points[g])));
  }
  CHECK(err <= 0.1);
}

TEST_CASE("mean is not identifiable from a single timestamp") {
  const EvalGrid grid = make_grid(0.0, 1.0, 11);
  std::vector<SubjectSeries> series(3, SubjectSeries{VectorXd::Constant(2, 0.5), VectorXd::Ones(2)});
  CHECK_THROWS_AS(fit_mean(series, grid), DataError);
}

TEST_CASE("covariance of a dense rank-one process") {
  const EvalGrid grid = make_grid(0.0, 1.0, 41);
  auto phi = [](double t) { return std::numbers::sqrt2 * std::sin(kPi * t); };
  const double lambda = 2.0;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<SubjectSeries> series;
  for (int i = 0; i < 200; ++i) {
    const double xi = std::sqrt(lambda) * z(rng);
    series.push_back(on_grid(grid, [&](double t) { return xi * phi(t); }));
  }
  VectorXd mean = VectorXd::Zero(grid.size());
  const CovarianceFit cov = fit_covariance(series, mean, grid, 0.1);
  // Compare against the sample version of lambda phi phi^T.
  double s2 = 0.0;
  for (const auto& s : series) s2 += std::pow(s.y[20] / phi(0.5), 2);
  const double lambda_hat = s2 / series.size();
  double err = 0.0;
  for (Index a = 0; a < grid.size(); ++a) {
    for (Index b = 0; b < grid.size(); ++b) {
      if (interior(grid, a, 0.8) && interior(grid, b, 0.8)) {
        err = std::max(err, std::abs(cov.surface(a, b) - lambda_hat * phi(grid.points[a]) * phi(grid.points[b])));
      }
    }
  }
  CHECK(err <= 0.05 * lambda);
  CHECK((cov.surface - cov.surface.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("noise variance: zero without noise, near truth with it") {
  const EvalGrid grid = make_grid(0.0, 1.0, 41);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<SubjectSeries> clean, noisy;
  for (int i = 0; i < 200; ++i) {
    const double a = z(rng);
    clean.push_back(on_grid(grid, [&](double) { return a; }));
    const double b = z(rng);
    auto s = on_grid(grid, [&](double t) { return b * std::numbers::sqrt2 * std::sin(kPi * t); });
    for (Index g = 0; g < grid.size(); ++g) s.y[g] += 0.3 * z(rng);
    noisy.push_back(s);
  }
  const VectorXd zero = VectorXd::Zero(grid.size());
  CHECK(fit_covariance(clean, zero, grid, 0.1).noise_var < 1e-6);
  const double nv = fit_covariance(noisy, zero, grid, 0.1).noise_var;
  CHECK(nv >= 0.06);
  CHECK(nv <= 0.12);
  std::vector<SubjectSeries> singles(4, SubjectSeries{VectorXd::Constant(1, 0.3), VectorXd::Ones(1)});
  CHECK_THROWS_AS(fit_covariance(singles, zero, grid, 0.1), DataError);
}

TEST_CASE("eigendecomposition: exact rank one, threshold arithmetic, dense oracle") {
  const EvalGrid grid = make_grid(0.0, 1.0, 61);
  // Grid-orthonormal basis by weighted Gram-Schmidt.
  MatrixXd basis(3, grid.size());
  for (Index g = 0; g < grid.size(); ++g) {
    const double t = grid.points[g];
    basis(0, g) = 1.0;
    basis(1, g) = t;
    basis(2, g) = t * t;
  }
  for (Index k = 0; k < 3; ++k) {
    for (Index j = 0; j < k; ++j) basis.row(k) -= grid.inner(basis.row(k), basis.row(j)) * basis.row(j);
    basis.row(k) /= std::sqrt(grid.inner(basis.row(k), basis.row(k)));
  }
  const VectorXd phi = basis.row(1).transpose();
  const EigenFit one = eigendecompose(3.0 * phi * phi.transpose(), grid, 0.95, 10);
  CHECK(one.K == 1);
  CHECK(one.values[0] == doctest::Approx(3.0));
  CHECK(std::pow(grid.inner(one.functions.row(0).transpose(), phi), 2) >= 1.0 - 1e-8);

  const MatrixXd two = 4.0 * basis.row(0).transpose() * basis.row(0) + 1.0 * basis.row(1).transpose() * basis.row(1);
  CHECK(eigendecompose(two, grid, 0.79, 10).K == 1);
  CHECK(eigendecompose(two, grid, 0.81, 10).K == 2);

  const VectorXd lambda = (VectorXd(3) << 5.0, 2.0, 0.5).finished();
  MatrixXd three = MatrixXd::Zero(grid.size(), grid.size());
  for (Index k = 0; k < 3; ++k) three += lambda[k] * basis.row(k).transpose() * basis.row(k);
  const EigenFit fit = eigendecompose(three, grid, 1.0, 10);
  REQUIRE(fit.values.size() == 3);
  for (Index k = 0; k < 3; ++k) CHECK(std::abs(fit.values[k] - lambda[k]) / lambda[k] < 1e-6);
  const MatrixXd gram = fit.functions * grid.weights.asDiagonal() * fit.functions.transpose();
  CHECK((gram - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
  for (Index k = 0; k < 3; ++k) {
    Index arg = 0;
    fit.functions.row(k).cwiseAbs().maxCoeff(&arg);
    CHECK(fit.functions(k, arg) > 0.0);
  }
  CHECK(fit.fve[2] == doctest::Approx(1.0));
  CHECK(fit.fve[0] <= fit.fve[1]);
  CHECK_THROWS_AS(eigendecompose(-three, grid, 0.9, 10), DataError);
}

TEST_CASE("PACE: zero residuals, shrinkage, dense projection") {
  const EvalGrid grid = make_grid(0.0, 1.0, 101);
  const VectorXd mean = VectorXd::Zero(grid.size());
  MatrixXd ef(1, grid.size());
  for (Index g = 0; g < grid.size(); ++g) ef(0, g) = std::numbers::sqrt2 * std::sin(kPi * grid.points[g]);
  ef /= std::sqrt(grid.inner(ef.row(0), ef.row(0)));
  const VectorXd lambda = VectorXd::Constant(1, 2.0);

  SubjectSeries zero{(VectorXd(3) << 0.1, 0.5, 0.9).finished(), VectorXd::Zero(3)};
  CHECK(pace_raw(zero, grid, mean, lambda, ef, 0.1).norm() == 0.0);

  SubjectSeries s{(VectorXd(3) << 0.2, 0.4, 0.7).finished(), (VectorXd(3) << 1.0, 1.4, 1.1).finished()};
  double prev = INFINITY;
  for (double nv : {0.01, 0.1, 1.0, 10.0, 100.0}) {
    const double norm = pace_raw(s, grid, mean, lambda, ef, nv).norm();
    CHECK(norm < prev);
    prev = norm;
  }

  const SubjectSeries dense = on_grid(grid, [&](double t) { return 1.3 * interpolate(grid, ef.row(0).transpose(), t); });
  const double projected = grid.inner(dense.y, ef.row(0).transpose());
  CHECK(std::abs(pace_raw(dense, grid, mean, lambda, ef, 0.0)[0] - projected) < 1e-4);
}

TEST_CASE("fitted model invariants") {
  const EvalGrid grid = make_grid(0.0, 1.0, 51);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<SubjectSeries> series;
  for (int i = 0; i < 150; ++i) {
    const double a = 1.5 * z(rng), b = 0.7 * z(rng);
    SubjectSeries s{VectorXd(8), VectorXd(8)};
    for (int j = 0; j < 8; ++j) s.t[j] = u(rng);
    std::sort(s.t.data(), s.t.data() + 8);
    for (int j = 0; j < 8; ++j) {
      const double t = s.t[j];
      s.y[j] = t + a * std::numbers::sqrt2 * std::sin(2 * kPi * t) + b * std::numbers::sqrt2 * std::cos(2 * kPi * t) +
               0.1 * z(rng);
    }
    series.push_back(s);
  }
  const UfpcaModel m = fit_ufpca(series, grid);
  REQUIRE(m.K() >= 1);
  const MatrixXd gram = m.eigenfunctions * grid.weights.asDiagonal() * m.eigenfunctions.transpose();
  CHECK((gram - MatrixXd::Identity(m.K(), m.K())).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(m.scores.colwise().mean().cwiseAbs().maxCoeff() < 1e-10);
  const UfpcaModel again = fit_ufpca(series, grid);
  CHECK(again.eigenfunctions == m.eigenfunctions);
  CHECK(again.scores == m.scores);
  const VectorXd fresh = score_subject(m, series[3]);
  CHECK((fresh - m.scores.row(3).transpose()).cwiseAbs().maxCoeff() < 1e-10);
  for (Index k = 1; k < m.fve.size(); ++k) CHECK(m.fve[k] >= m.fve[k - 1]);
}
