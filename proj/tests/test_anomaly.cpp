#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sfda/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

using namespace sfda;

namespace {

MatrixXd null_scores(Index n, Index B, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  MatrixXd x(n, B);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < B; ++j) x(i, j) = z(rng);
  return x;
}

RawRecord rec(const std::string& id, double t, std::vector<double> y) {
  RawRecord r;
  r.subject_id = id;
  r.timestamp = t;
  r.vector = std::move(y);
  return r;
}

}  // namespace

TEST_CASE("split sizes and determinism") {
  std::vector<std::size_t> members(11);
  std::iota(members.begin(), members.end(), 0);
  const SplitPlan s = make_split(members, 5);
  CHECK(s.I1.size() == 6);
  CHECK(s.I2.size() == 5);
  std::set<std::size_t> all(s.I1.begin(), s.I1.end());
  all.insert(s.I2.begin(), s.I2.end());
  CHECK(all.size() == 11);
  CHECK(make_split(members, 5).I1 == s.I1);
  members.pop_back();
  const SplitPlan e = make_split(members, 5);
  CHECK(e.I1.size() == e.I2.size());
}

TEST_CASE("quantile convention and screening") {
  std::vector<double> v{3, 1, 2, 4, 5, 6, 7, 8, 9, 10};
  CHECK(screen_quantile(v, 0.1) == 1.0);
  CHECK(screen_quantile(v, 0.9) == 9.0);
  CHECK(screen_quantile(v, 0.0) == 1.0);
  CHECK(screen_quantile(v, 0.95) == 10.0);

  MatrixXd s(10, 1);
  for (int i = 0; i < 10; ++i) s(i, 0) = i + 1;
  const ScreenResult r = screen(s, 1, 0.2);
  CHECK(r.cutoffs(0, 0) == 1.0);
  CHECK(r.cutoffs(0, 1) == 9.0);
  REQUIRE(r.G.size() == 1);
  CHECK(r.G[0] == 9);
  CHECK(r.Gc.size() == 9);

  CHECK(screen(MatrixXd::Constant(8, 2, 1.5), 2, 0.2).G.empty());
  CHECK(screen(null_scores(50, 2, 3), 2, 1e-9).G.empty());
}

TEST_CASE("empirical p-values") {
  const std::vector<double> c{1, 2, 3};
  CHECK(empirical_pvalue(5, c) == 0.25);
  CHECK(empirical_pvalue(0, c) == 1.0);
  CHECK(empirical_pvalue(-2, c) == 0.75);
  CHECK_THROWS(empirical_pvalue(1, std::vector<double>{}));
  const std::vector<double> pool{-0.4, 0.2, 1.1, -2.0, 0.7};
  double prev = 2.0;
  for (double shift : {0.0, 0.5, 1.0, 1.5, 3.0, 10.0}) {
    const double p = empirical_pvalue(shift, pool);
    CHECK(p <= prev);
    CHECK(p >= 1.0 / 6.0);
    CHECK(p <= 1.0);
    prev = p;
  }
}

TEST_CASE("multiplicity adjustments") {
  const std::vector<double> raw{0.02, 0.5, 0.9, 0.011};
  const auto bonf = adjust_pvalues(raw, Multiplicity::kBonferroni);
  CHECK(bonf[0] == doctest::Approx(0.08));
  CHECK(bonf[1] == 1.0);
  CHECK(bonf[3] == doctest::Approx(0.044));
  // Step-up by hand: sorted (0.011, 0.02, 0.5, 0.9) -> (0.044, 0.04, 0.667, 0.9), then running minimum from the top.
  const auto bh = adjust_pvalues(raw, Multiplicity::kBH);
  CHECK(bh[3] == doctest::Approx(0.04));
  CHECK(bh[0] == doctest::Approx(0.04));
  CHECK(bh[1] == doctest::Approx(2.0 / 3.0));
  CHECK(bh[2] == doctest::Approx(0.9));
  CHECK(parse_multiplicity("bh") == Multiplicity::kBH);
  CHECK(to_string(Multiplicity::kBonferroni) == "bonferroni");
  CHECK_THROWS_AS(parse_multiplicity("holm"), ConfigError);
}

TEST_CASE("confirmation thresholds") {
  MatrixXd s(100, 1);
  for (int i = 0; i < 99; ++i) s(i, 0) = -1.0 + 2.0 * i / 98.0;
  s(99, 0) = 100.0;
  std::vector<std::size_t> calib(99);
  std::iota(calib.begin(), calib.end(), 0);
  MatrixXd adj;
  const auto hit = confirm(s, {99}, calib, 1, 0.05, Multiplicity::kBonferroni, &adj);
  REQUIRE(hit.size() == 1);
  CHECK(hit[0].components == std::vector<int>{0});
  CHECK(adj(99, 0) == doctest::Approx(0.01));
  std::vector<std::size_t> without50 = calib;
  without50.erase(without50.begin() + 50);
  CHECK(confirm(s, {50}, without50, 1, 0.05).empty());
  CHECK_THROWS(confirm(s, {5}, calib, 1, 0.05));

  // Calibration pool of 999 values 0..998 gives p = (1 + #{c >= v}) / 1000 exactly.
  MatrixXd four(1003, 4);
  for (int i = 0; i < 999; ++i) four.row(i).setConstant(i);
  four.row(1000) << 999 - 19, 999 - 499, 999 - 899, 999 - 10;  // raw p = 0.02, 0.5, 0.9, 0.011
  std::vector<std::size_t> c999(999);
  std::iota(c999.begin(), c999.end(), 0);
  MatrixXd raw;
  const auto f = confirm(four, {1000}, c999, 4, 0.05, Multiplicity::kBonferroni, nullptr, &raw);
  CHECK(raw(1000, 0) == doctest::Approx(0.02));
  CHECK(raw(1000, 3) == doctest::Approx(0.011));
  REQUIRE(f.size() == 1);
  CHECK(f[0].components == std::vector<int>{3});
}

TEST_CASE("detect_type1 preconditions") {
  const MatrixXd s = null_scores(3, 1, 1);
  CHECK_THROWS_AS(detect_type1(s, {false, false, false}, 1, {}), DataError);
  const MatrixXd big = null_scores(40, 2, 1);
  DetectOptions bad;
  bad.alpha1 = 0.05;
  bad.alpha = 0.05;
  CHECK_THROWS_AS(detect_type1(big, std::vector<bool>(40, false), 2, bad), ConfigError);
  CHECK_THROWS_AS(detect_type1(big, std::vector<bool>(40, false), 3, {}), ConfigError);
}

TEST_CASE("cross-fit hygiene, p-value range and trimmed rows") {
  MatrixXd s = null_scores(120, 2, 4);
  s(7, 0) = 12.0;
  std::vector<bool> trimmed(120, false);
  trimmed[3] = trimmed[50] = true;
  DetectOptions o;
  o.seed = 77;
  const AnomalyReport r = detect_type1(s, trimmed, 2, o);
  for (std::size_t t : {std::size_t{3}, std::size_t{50}}) {
    CHECK(std::find(r.G1c.begin(), r.G1c.end(), t) == r.G1c.end());
    CHECK(std::find(r.G2c.begin(), r.G2c.end(), t) == r.G2c.end());
  }
  CHECK(r.split.I1.size() + r.split.I2.size() == 118);
  for (std::size_t i = 0; i < 120; ++i) {
    const auto& pool = r.cross_pool(i);
    CHECK(std::find(pool.begin(), pool.end(), i) == pool.end());
    CHECK(std::find(pool.begin(), pool.end(), std::size_t{3}) == pool.end());
    for (Index m = 0; m < 2; ++m) {
      CHECK(r.pvalues(static_cast<Index>(i), m) > 0.0);
      CHECK(r.pvalues(static_cast<Index>(i), m) <= 1.0);
      CHECK(r.raw_pvalues(static_cast<Index>(i), m) >= 1.0 / (1.0 + pool.size()) - 1e-15);
    }
  }
  for (const auto& f : r.A1) CHECK(!f.components.empty());
  const Flagged* hit = r.find(7);
  REQUIRE(hit != nullptr);
  CHECK(hit->components.front() == 0);
  const AnomalyReport again = detect_type1(s, trimmed, 2, o);
  CHECK(again.split.I1 == r.split.I1);
  CHECK(again.pvalues == r.pvalues);
}

TEST_CASE("planted +8 sd anomaly among 99 nulls") {
  int confirmed = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    MatrixXd s = null_scores(100, 1, 1000 + seed);
    s(0, 0) = 8.0;
    DetectOptions o;
    o.seed = seed;
    const AnomalyReport r = detect_type1(s, std::vector<bool>(100, false), 1, o);
    const Flagged* f = r.find(0);
    if (f != nullptr && f->components.front() == 0) ++confirmed;
  }
  CHECK(confirmed >= 95);
}

TEST_CASE("window lookup") {
  const WindowSet w = WindowSet::equal_width(0.0, 4.0, 4);
  CHECK(w.bounds == std::vector<double>{0, 1, 2, 3, 4});
  CHECK(w.locate(0.0) == 0);
  CHECK(w.locate(1.0) == 0);
  CHECK(w.locate(1.0001) == 1);
  CHECK(w.locate(4.0) == 3);
  CHECK(w.locate(-0.1) == -1);
  CHECK(w.locate(4.1) == -1);
  CHECK_THROWS(WindowSet::explicit_bounds({0.0, 2.0, 1.0}));
  CHECK_THROWS(WindowSet::equal_width(0.0, 1.0, 0));
  CHECK(WindowSet::explicit_bounds({0.0, 0.5, 3.0}).locate(2.0) == 1);
}

TEST_CASE("window deviations, NA handling and localisation") {
  // p = 4, mean curves identically zero, windows (0,1], (1,2].
  const EvalGrid grid = make_grid(0.0, 2.0, 21);
  const std::vector<VectorXd> means(4, VectorXd::Zero(21));
  std::vector<RawRecord> records;
  records.push_back(rec("a", 0.5, {0.5, -0.2, 0.1, 0.0}));
  records.push_back(rec("a", 1.5, {0.0, 0.0, 0.0, 0.0}));
  records.push_back(rec("b", 0.2, {3.0, 0.0, 0.0, 0.0}));  // window 2 empty for b
  for (int j = 0; j < 6; ++j) {
    const std::string id = "c" + std::to_string(j);
    const double d = 0.1 * (j + 1);
    records.push_back(rec(id, 0.4, {d, 0.0, 0.0, 0.0}));
    records.push_back(rec(id, 1.4, {-d, 0.0, 0.0, 0.0}));
  }
  const Dataset data = build_dataset(records);
  REQUIRE(data.size() == 8);

  AnomalyReport r;
  r.half = {1, 1, 2, 2, 2, 1, 1, 1};
  r.G2c = {2, 3, 4};
  r.G1c = {5, 6, 7};
  r.A1 = {{0, {0}}, {1, {0}}};
  const WindowReport wr = window_profile(data, means, grid, r, WindowSet::equal_width(0.0, 2.0, 2), 0.6);
  CHECK(wr.window_means.cwiseAbs().maxCoeff() == 0.0);
  CHECK(wr.deviations(0, 0) == doctest::Approx(0.5));
  CHECK(wr.deviations(0, 1) == 0.0);
  CHECK(wr.raw_pvalues(0, 1) == 1.0);
  CHECK(std::isnan(wr.deviations(1, 1)));
  CHECK(std::isnan(wr.pvalues(1, 1)));
  // Subject b: D = 3 beats the pool {0.1, 0.2, 0.3} -> p = 1/4, below 0.6 / 2.
  CHECK(wr.raw_pvalues(1, 0) == doctest::Approx(0.25));
  CHECK(wr.pvalues(1, 0) == doctest::Approx(0.5));
  // Subject a: D = 0.5 also beats the pool -> p = 1/4.
  CHECK(wr.raw_pvalues(0, 0) == doctest::Approx(0.25));
  REQUIRE(wr.A2.size() == 2);
  CHECK(wr.find(1)->components == std::vector<int>{0});
  CHECK(wr.find(0)->components == std::vector<int>{0});
  CHECK(wr.find(2) == nullptr);
}

TEST_CASE("mode-of-variation bundle") {
  const EvalGrid grid = make_grid(0.0, 1.0, 40);
  UfpcaModel u;
  u.grid = grid;
  u.mean = grid.points;
  u.eigenfunctions = MatrixXd::Constant(1, 40, 1.0);
  u.scores = (MatrixXd(3, 1) << -1.0, 0.0, 1.0).finished();
  u.eigenvalues = VectorXd::Constant(1, 1.0);
  const MfpcaModel m = fit_mfpca({u}, 0.9);
  const std::vector<std::string> ids{"x", "y", "z"};
  const WindowSet w = WindowSet::equal_width(0.0, 1.0, 4);
  const PlotBundle b = mode_of_variation_data(m, m.means(), m.scores, ids, 1, 0, {0}, {2}, w, {2});
  const std::size_t interior = 40 - 2 * 2;
  CHECK(b.rows.size() == 1 * (1 + 2) * interior);
  for (const auto& row : b.rows) {
    if (row.role == "subject" || row.role == "mean") CHECK(row.value == doctest::Approx(row.t));
    if (row.role == "cohort") CHECK(row.value == doctest::Approx(row.t + m.psi[0](0, 0)));
  }
  CHECK(std::abs(m.psi[0](0, 0)) == doctest::Approx(1.0));
  CHECK(b.rows.front().t == doctest::Approx(grid.points[2]));
  REQUIRE(b.windows.size() == 4);
  CHECK(b.windows[2].flagged);
  CHECK(!b.windows[1].flagged);
  CHECK_THROWS_AS(mode_of_variation_data(m, m.means(), m.scores, ids, 1, 0, {}, {2}, w, {}), ConfigError);
}
