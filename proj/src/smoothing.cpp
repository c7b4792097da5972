#include "sfda/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sfda {

namespace {

constexpr int kMaxDoublings = 60;

struct LocalMoments {
  double s0 = 0, s1 = 0, s2 = 0, r0 = 0, r1 = 0;
  int support = 0;
};

LocalMoments moments_1d(const Design1D& d, double x, double h) {
  LocalMoments m;
  const auto lo = std::lower_bound(d.t.begin(), d.t.end(), x - h) - d.t.begin();
  for (auto i = static_cast<std::size_t>(lo); i < d.size() && d.t[i] <= x + h; ++i) {
    const double u = d.t[i] - x;
    const double k = epanechnikov(u / h);
    if (k <= 0.0) continue;
    const double w = k * d.count[i];
    m.s0 += w;
    m.s1 += w * u;
    m.s2 += w * u * u;
    m.r0 += k * d.sum_y[i];
    m.r1 += k * d.sum_y[i] * u;
    ++m.support;
  }
  return m;
}

bool solvable(const LocalMoments& m, double h) {
  if (m.support < 2) return false;
  const double det = m.s0 * m.s2 - m.s1 * m.s1;
  return det > 1e-12 * m.s0 * m.s0 * h * h;
}

}  // namespace

double Design1D::total() const {
  double n = 0;
  for (double c : count) n += c;
  return n;
}

Design1D Design1D::from_pairs(std::vector<std::pair<double, double>> pairs) {
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  Design1D d;
  for (const auto& [t, y] : pairs) {
    if (d.t.empty() || d.t.back() != t) {
      d.t.push_back(t);
      d.count.push_back(0);
      d.sum_y.push_back(0);
      d.sum_y2.push_back(0);
    }
    d.count.back() += 1;
    d.sum_y.back() += y;
    d.sum_y2.back() += y * y;
  }
  return d;
}

double local_linear(const Design1D& design, double x, double bandwidth) {
  if (design.size() < 2) throw DataError("mean not identifiable: fewer than two design points");
  double h = bandwidth;
  for (int attempt = 0; attempt <= kMaxDoublings; ++attempt, h *= 2.0) {
    const LocalMoments m = moments_1d(design, x, h);
    if (!solvable(m, h)) continue;
    return (m.s2 * m.r0 - m.s1 * m.r1) / (m.s0 * m.s2 - m.s1 * m.s1);
  }
  throw DataError("local-linear fit failed to find support");
}

VectorXd local_linear(const Design1D& design, const VectorXd& xs, double bandwidth) {
  VectorXd out(xs.size());
  for (Index g = 0; g < xs.size(); ++g) out[g] = local_linear(design, xs[g], bandwidth);
  return out;
}

double gcv_score(const Design1D& design, double bandwidth) {
  const double n = design.total();
  double rss = 0.0;
  double trace = 0.0;
  for (std::size_t i = 0; i < design.size(); ++i) {
    const double x = design.t[i];
    double h = bandwidth;
    LocalMoments m;
    for (int attempt = 0; attempt <= kMaxDoublings; ++attempt, h *= 2.0) {
      m = moments_1d(design, x, h);
      if (solvable(m, h)) break;
    }
    if (!solvable(m, h)) return std::numeric_limits<double>::infinity();
    const double det = m.s0 * m.s2 - m.s1 * m.s1;
    const double fit = (m.s2 * m.r0 - m.s1 * m.r1) / det;
    // Weight of the point's own mean in its fitted value (u = 0 there).
    const double self = epanechnikov(0.0) * design.count[i] * m.s2 / det;
    trace += self;
    rss += design.sum_y2[i] - 2.0 * fit * design.sum_y[i] + design.count[i] * fit * fit;
  }
  const double denom = 1.0 - trace / n;
  if (denom <= 0.0) return std::numeric_limits<double>::infinity();
  return (std::max(rss, 0.0) / n) / (denom * denom);
}

std::vector<double> bandwidth_candidates(const Design1D& design, double t_min, double t_max) {
  std::vector<double> gaps;
  for (std::size_t i = 1; i < design.size(); ++i) gaps.push_back(design.t[i] - design.t[i - 1]);
  if (gaps.empty()) throw DataError("mean not identifiable: all observations at one timestamp");
  std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
  double lo = 1.5 * gaps[gaps.size() / 2];
  const double hi = (t_max - t_min) / 2.0;
  if (!(lo < hi)) lo = hi / 10.0;
  std::vector<double> out(10);
  for (int i = 0; i < 10; ++i) out[i] = lo * std::pow(hi / lo, i / 9.0);
  return out;
}

double select_bandwidth_gcv(const Design1D& design, double t_min, double t_max) {
  const auto candidates = bandwidth_candidates(design, t_min, t_max);
  double best = candidates.back();
  double best_score = std::numeric_limits<double>::infinity();
  for (double h : candidates) {
    const double score = gcv_score(design, h);
    if (score <= best_score) {
      best_score = score;
      best = h;
    }
  }
  return best;
}

MatrixXd local_linear_surface(const Design2D& design, const VectorXd& grid, double bandwidth) {
  if (design.size() == 0) throw DataError("covariance not identifiable: no off-diagonal pairs");
  const Index G = grid.size();
  MatrixXd out(G, G);
  for (Index a = 0; a < G; ++a) {
    for (Index b = a; b < G; ++b) {
      const double x = grid[a];
      const double y = grid[b];
      double h = bandwidth;
      bool done = false;
      for (int attempt = 0; attempt <= kMaxDoublings && !done; ++attempt, h *= 2.0) {
        Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
        Eigen::Vector3d r = Eigen::Vector3d::Zero();
        int support = 0;
        const auto lo = std::lower_bound(design.s.begin(), design.s.end(), x - h) - design.s.begin();
        for (auto i = static_cast<std::size_t>(lo); i < design.size() && design.s[i] <= x + h; ++i) {
          const double du = design.s[i] - x;
          const double dv = design.t[i] - y;
          const double k = epanechnikov(du / h) * epanechnikov(dv / h);
          if (k <= 0.0) continue;
          const Eigen::Vector3d z(1.0, du, dv);
          S.noalias() += (k * design.count[i]) * z * z.transpose();
          r.noalias() += (k * design.sum[i]) * z;
          ++support;
        }
        if (support < 3) continue;
        Eigen::LDLT<Eigen::Matrix3d> ldlt(S);
        if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12) continue;
        out(a, b) = ldlt.solve(r)[0];
        done = true;
      }
      if (!done) throw DataError("covariance smoother failed to find support");
      out(b, a) = out(a, b);
    }
  }
  return out;
}

}  // namespace sfda
