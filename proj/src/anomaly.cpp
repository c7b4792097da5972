#include "sfda/anomaly.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace sfda {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

SplitPlan make_split(std::vector<std::size_t> members, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "split"));
  std::shuffle(members.begin(), members.end(), rng);
  SplitPlan plan;
  plan.seed = seed;
  const std::size_t n1 = (members.size() + 1) / 2;
  plan.I1.assign(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n1));
  plan.I2.assign(members.begin() + static_cast<std::ptrdiff_t>(n1), members.end());
  std::sort(plan.I1.begin(), plan.I1.end());
  std::sort(plan.I2.begin(), plan.I2.end());
  return plan;
}

double screen_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DataError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto j = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
  j = std::clamp<std::size_t>(j, 1, values.size());
  return values[j - 1];
}

ScreenResult screen(const MatrixXd& scores, const std::vector<std::size_t>& calib_rows,
                    const std::vector<std::size_t>& extra_rows, int B, double alpha1) {
  if (!(alpha1 > 0.0 && alpha1 < 1.0)) throw ConfigError("alpha1 must be in (0, 1)");
  if (B < 1 || B > scores.cols()) throw ConfigError("B out of range");
  if (calib_rows.size() < 2) throw DataError("screening needs at least two subjects per half");
  ScreenResult out;
  out.cutoffs.resize(B, 2);
  const double tail = alpha1 / (2.0 * B);
  for (int m = 0; m < B; ++m) {
    std::vector<double> col;
    col.reserve(calib_rows.size());
    for (std::size_t r : calib_rows) col.push_back(scores(static_cast<Index>(r), m));
    out.cutoffs(m, 0) = screen_quantile(col, tail);
    out.cutoffs(m, 1) = screen_quantile(col, 1.0 - tail);
  }
  auto outside = [&](std::size_t r) {
    for (int m = 0; m < B; ++m) {
      const double v = scores(static_cast<Index>(r), m);
      if (v < out.cutoffs(m, 0) || v > out.cutoffs(m, 1)) return true;
    }
    return false;
  };
  for (std::size_t r : calib_rows) (outside(r) ? out.G : out.Gc).push_back(r);
  for (std::size_t r : extra_rows) {
    if (outside(r)) out.G.push_back(r);
  }
  std::sort(out.G.begin(), out.G.end());
  return out;
}

ScreenResult screen(const MatrixXd& scores, int B, double alpha1) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(scores.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  return screen(scores, rows, {}, B, alpha1);
}

double empirical_pvalue(double value, std::span<const double> calib) {
  if (calib.empty()) throw DataError("empty calibration set");
  const double a = std::abs(value);
  std::size_t count = 0;
  for (double c : calib) count += std::abs(c) >= a ? 1 : 0;
  return (1.0 + static_cast<double>(count)) / (1.0 + static_cast<double>(calib.size()));
}

Multiplicity parse_multiplicity(std::string_view name) {
  if (name == "bonferroni") return Multiplicity::kBonferroni;
  if (name == "bh") return Multiplicity::kBH;
  throw ConfigError("unknown multiplicity '" + std::string(name) + "'");
}

std::string to_string(Multiplicity m) { return m == Multiplicity::kBH ? "bh" : "bonferroni"; }

std::vector<double> adjust_pvalues(const std::vector<double>& raw, Multiplicity method) {
  const double n = static_cast<double>(raw.size());
  std::vector<double> out(raw.size());
  if (method == Multiplicity::kBonferroni) {
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = std::min(1.0, n * raw[i]);
    return out;
  }
  std::vector<std::size_t> order(raw.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return raw[a] < raw[b]; });
  double running = 1.0;
  for (std::size_t r = raw.size(); r-- > 0;) {
    const std::size_t i = order[r];
    running = std::min(running, raw[i] * n / static_cast<double>(r + 1));
    out[i] = std::min(1.0, running);
  }
  return out;
}

std::vector<Flagged> confirm(const MatrixXd& scores, const std::vector<std::size_t>& test,
                             const std::vector<std::size_t>& calib, int B, double alpha,
                             Multiplicity method, MatrixXd* adjusted, MatrixXd* raw) {
  if (calib.empty()) throw DataError("no clean calibration subjects");
  if (B < 1 || B > scores.cols()) throw ConfigError("B out of range");
  std::vector<std::vector<double>> pools(static_cast<std::size_t>(B));
  for (int m = 0; m < B; ++m) {
    for (std::size_t j : calib) pools[m].push_back(scores(static_cast<Index>(j), m));
  }
  if (!test.empty() && 1.0 / static_cast<double>(calib.size() + 1) >= alpha / B) {
    spdlog::warn("calibration pool of {} cannot reach alpha/B = {:.4g}; no subject can be confirmed", calib.size(),
                 alpha / B);
  }
  for (MatrixXd* m : {adjusted, raw}) {
    if (m != nullptr && (m->rows() != scores.rows() || m->cols() < B)) m->setConstant(scores.rows(), B, kNaN);
  }
  std::vector<Flagged> out;
  for (std::size_t i : test) {
    if (std::find(calib.begin(), calib.end(), i) != calib.end()) {
      throw Error("cross-fit violation: subject row " + std::to_string(i) + " in its own calibration pool");
    }
    std::vector<double> p(static_cast<std::size_t>(B));
    for (int m = 0; m < B; ++m) p[m] = empirical_pvalue(scores(static_cast<Index>(i), m), pools[m]);
    const std::vector<double> adj = adjust_pvalues(p, method);
    Flagged f{i, {}};
    for (int m = 0; m < B; ++m) {
      const bool hit = method == Multiplicity::kBonferroni ? p[m] < alpha / B : adj[m] < alpha;
      if (hit) f.components.push_back(m);
      if (adjusted) (*adjusted)(static_cast<Index>(i), m) = adj[m];
      if (raw) (*raw)(static_cast<Index>(i), m) = p[m];
    }
    if (!f.components.empty()) out.push_back(std::move(f));
  }
  return out;
}

const Flagged* AnomalyReport::find(std::size_t row) const {
  for (const auto& f : A1) {
    if (f.subject == row) return &f;
  }
  return nullptr;
}

AnomalyReport detect_type1(const MatrixXd& scores, const std::vector<bool>& trimmed, int B,
                           const DetectOptions& options) {
  if (!(options.alpha1 > options.alpha)) throw ConfigError("alpha1 must exceed alpha");
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
  if (static_cast<std::size_t>(scores.rows()) != trimmed.size()) throw Error("trimmed flags do not match score rows");
  if (B < 1 || B > scores.cols()) throw ConfigError("B = " + std::to_string(B) + " out of range");

  std::vector<std::size_t> retained, cut;
  for (std::size_t i = 0; i < trimmed.size(); ++i) (trimmed[i] ? cut : retained).push_back(i);
  if (retained.size() < 4) {
    throw DataError("cluster has " + std::to_string(retained.size()) + " retained subjects; at least 4 required");
  }

  AnomalyReport r;
  r.B = B;
  r.alpha1 = options.alpha1;
  r.alpha = options.alpha;
  r.multiplicity = options.multiplicity;
  r.split = make_split(retained, options.seed);
  r.half.assign(trimmed.size(), 0);
  for (std::size_t i : r.split.I1) r.half[i] = 1;
  for (std::size_t i : r.split.I2) r.half[i] = 2;
  std::vector<std::size_t> extra1, extra2;
  std::mt19937_64 rng(derive_seed(options.seed, "trimmed-half"));
  for (std::size_t i : cut) {
    const int h = std::bernoulli_distribution(0.5)(rng) ? 1 : 2;
    r.half[i] = h;
    (h == 1 ? extra1 : extra2).push_back(i);
  }

  const ScreenResult s1 = screen(scores, r.split.I1, extra1, B, options.alpha1);
  const ScreenResult s2 = screen(scores, r.split.I2, extra2, B, options.alpha1);
  r.G1 = s1.G;
  r.G1c = s1.Gc;
  r.G2 = s2.G;
  r.G2c = s2.Gc;
  if (r.G1c.empty() || r.G2c.empty()) {
    throw DataError("no clean calibration subjects in one split half; lower alpha1 or enlarge the cluster");
  }

  r.pvalues = MatrixXd::Constant(scores.rows(), B, kNaN);
  r.raw_pvalues = MatrixXd::Constant(scores.rows(), B, kNaN);
  std::vector<std::size_t> half1, half2;
  for (std::size_t i = 0; i < r.half.size(); ++i) (r.half[i] == 1 ? half1 : half2).push_back(i);
  // Every subject gets p-values against the opposite clean pool; only the
  // screened ones are eligible for confirmation.
  confirm(scores, half1, r.G2c, B, options.alpha, options.multiplicity, &r.pvalues, &r.raw_pvalues);
  confirm(scores, half2, r.G1c, B, options.alpha, options.multiplicity, &r.pvalues, &r.raw_pvalues);
  auto a = confirm(scores, r.G1, r.G2c, B, options.alpha, options.multiplicity);
  auto b = confirm(scores, r.G2, r.G1c, B, options.alpha, options.multiplicity);
  r.A1 = std::move(a);
  r.A1.insert(r.A1.end(), b.begin(), b.end());
  std::sort(r.A1.begin(), r.A1.end(), [](const Flagged& x, const Flagged& y) { return x.subject < y.subject; });
  return r;
}

int WindowSet::locate(double t) const {
  if (bounds.size() < 2 || t < bounds.front() || t > bounds.back()) return -1;
  if (t == bounds.front()) return 0;
  const auto it = std::lower_bound(bounds.begin(), bounds.end(), t);
  return static_cast<int>(it - bounds.begin()) - 1;
}

WindowSet WindowSet::equal_width(double t_min, double t_max, int W) {
  if (W < 1) throw ConfigError("window count must be >= 1");
  if (!(t_min < t_max)) throw DataError("degenerate time domain for windows");
  WindowSet s;
  for (int w = 0; w <= W; ++w) s.bounds.push_back(t_min + (t_max - t_min) * w / W);
  s.bounds.back() = t_max;
  return s;
}

WindowSet WindowSet::explicit_bounds(std::vector<double> bounds) {
  if (bounds.size() < 2) throw ConfigError("window boundaries need at least two values");
  for (std::size_t i = 1; i < bounds.size(); ++i) {
    if (!(bounds[i] > bounds[i - 1])) throw ConfigError("window boundaries must increase strictly");
  }
  return WindowSet{std::move(bounds)};
}

const Flagged* WindowReport::find(std::size_t row) const {
  for (const auto& f : A2) {
    if (f.subject == row) return &f;
  }
  return nullptr;
}

WindowReport window_profile(const Dataset& cluster_data, const std::vector<VectorXd>& means,
                            const EvalGrid& grid, const AnomalyReport& report,
                            const WindowSet& windows, double alpha) {
  const int W = windows.W();
  const auto n = static_cast<Index>(cluster_data.size());
  const auto p = static_cast<Index>(means.size());
  if (static_cast<std::size_t>(n) != report.half.size()) throw Error("window data rows differ from report rows");
  WindowReport out;
  out.windows = windows;
  out.alpha = alpha;

  out.window_means.resize(W, p);
  for (int w = 0; w < W; ++w) {
    const double a = windows.bounds[w];
    const double b = windows.bounds[w + 1];
    double wsum = 0.0;
    VectorXd acc = VectorXd::Zero(p);
    for (Index g = 0; g < grid.size(); ++g) {
      const double t = grid.points[g];
      if (!((t > a || (w == 0 && t >= a)) && t <= b)) continue;
      wsum += grid.weights[g];
      for (Index d = 0; d < p; ++d) acc[d] += grid.weights[g] * means[d][g];
    }
    for (Index d = 0; d < p; ++d) {
      out.window_means(w, d) = wsum > 0 ? acc[d] / wsum : interpolate(grid, means[d], 0.5 * (a + b));
    }
  }

  out.deviations = MatrixXd::Constant(n, W, kNaN);
  for (Index i = 0; i < n; ++i) {
    const auto& subject = cluster_data.subjects[static_cast<std::size_t>(i)];
    MatrixXd sum = MatrixXd::Zero(W, p);
    VectorXd count = VectorXd::Zero(W);
    for (const auto& obs : subject.records) {
      const int w = windows.locate(obs.t);
      if (w < 0) continue;
      count[w] += 1;
      for (Index d = 0; d < p; ++d) sum(w, d) += obs.y[static_cast<std::size_t>(d)];
    }
    for (int w = 0; w < W; ++w) {
      if (count[w] == 0) continue;
      out.deviations(i, w) = (sum.row(w) / count[w] - out.window_means.row(w)).cwiseAbs().maxCoeff();
    }
  }

  out.raw_pvalues = MatrixXd::Constant(n, W, kNaN);
  out.pvalues = MatrixXd::Constant(n, W, kNaN);
  for (int h = 1; h <= 2; ++h) {
    const auto& pool = h == 1 ? report.G2c : report.G1c;
    for (int w = 0; w < W; ++w) {
      std::vector<double> calib;
      for (std::size_t j : pool) {
        if (!std::isnan(out.deviations(static_cast<Index>(j), w))) calib.push_back(out.deviations(static_cast<Index>(j), w));
      }
      if (calib.empty()) {
        spdlog::warn("window {}: empty calibration pool for half {}; p-values NA", w + 1, h);
        continue;
      }
      for (Index i = 0; i < n; ++i) {
        if (report.half[static_cast<std::size_t>(i)] != h) continue;
        const double D = out.deviations(i, w);
        if (std::isnan(D)) continue;
        const double pv = empirical_pvalue(D, calib);
        out.raw_pvalues(i, w) = pv;
        out.pvalues(i, w) = std::min(1.0, W * pv);
      }
    }
  }

  for (const auto& f : report.A1) {
    Flagged g{f.subject, {}};
    for (int w = 0; w < W; ++w) {
      const double pv = out.raw_pvalues(static_cast<Index>(f.subject), w);
      if (!std::isnan(pv) && pv < alpha / W) g.components.push_back(w);
    }
    if (!g.components.empty()) out.A2.push_back(std::move(g));
  }
  return out;
}

PlotBundle mode_of_variation_data(const MfpcaModel& model, const std::vector<VectorXd>& means,
                                  const MatrixXd& rho, const std::vector<std::string>& ids,
                                  std::size_t subject, int component, const std::vector<int>& S_i,
                                  const std::vector<std::size_t>& cohort, const WindowSet& windows,
                                  const std::vector<int>& W_i) {
  if (std::find(S_i.begin(), S_i.end(), component) == S_i.end()) {
    throw ConfigError("component " + std::to_string(component + 1) + " is not in the subject's outlying set");
  }
  if (component < 0 || component >= model.components()) throw ConfigError("component out of range");
  const EvalGrid& grid = model.grid();
  const Index G = grid.size();
  const auto drop = static_cast<Index>(std::floor(0.05 * static_cast<double>(G)));
  const MatrixXd& psi = model.psi[static_cast<std::size_t>(component)];

  PlotBundle bundle;
  bundle.component = component;
  for (std::size_t d = 0; d < means.size(); ++d) {
    auto emit = [&](const std::string& id, const std::string& role, double coef) {
      for (Index g = drop; g < G - drop; ++g) {
        bundle.rows.push_back({grid.points[g], static_cast<int>(d), id, role,
                               means[d][g] + coef * psi(static_cast<Index>(d), g)});
      }
    };
    emit("mean", "mean", 0.0);
    for (std::size_t j : cohort) emit(ids[j], "cohort", rho(static_cast<Index>(j), component));
    emit(ids[subject], "subject", rho(static_cast<Index>(subject), component));
  }
  for (int w = 0; w < windows.W(); ++w) {
    bundle.windows.push_back({w, windows.bounds[w], windows.bounds[w + 1],
                              std::find(W_i.begin(), W_i.end(), w) != W_i.end()});
  }
  return bundle;
}

}  // namespace sfda
