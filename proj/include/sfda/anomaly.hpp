#pragma once

#include "sfda/dataset.hpp"
#include "sfda/mfpca.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sfda {

/// Random halving of a cluster's retained members; |I1| = ceil(n/2).
struct SplitPlan {
  std::vector<std::size_t> I1;
  std::vector<std::size_t> I2;
  std::uint64_t seed = 0;
};

SplitPlan make_split(std::vector<std::size_t> members, std::uint64_t seed);

/// q(p) = x_(j) with j the smallest index such that j/n >= p (j >= 1).
double screen_quantile(std::vector<double> values, double p);

struct ScreenResult {
  std::vector<std::size_t> G;    // flagged rows
  std::vector<std::size_t> Gc;   // clean calibration rows
  MatrixXd cutoffs;              // B x 2: lower, upper
};

/// Cutoffs come from `calib_rows` (the half's retained members); every row in
/// `calib_rows` and `extra_rows` is flagged if any of the first B components
/// lies strictly outside. Only calib rows can end up in Gc.
ScreenResult screen(const MatrixXd& scores, const std::vector<std::size_t>& calib_rows,
                    const std::vector<std::size_t>& extra_rows, int B, double alpha1);
/// Convenience: all rows of `scores` form the half.
ScreenResult screen(const MatrixXd& scores, int B, double alpha1);

/// (1 + #{|c| >= |value|}) / (1 + n).
double empirical_pvalue(double value, std::span<const double> calib);

enum class Multiplicity { kBonferroni, kBH };

Multiplicity parse_multiplicity(std::string_view name);
std::string to_string(Multiplicity m);

/// Adjusts one subject's B raw p-values: Bonferroni min(1, B p) or BH step-up.
std::vector<double> adjust_pvalues(const std::vector<double>& raw, Multiplicity method);

struct Flagged {
  std::size_t subject = 0;         // row / position
  std::vector<int> components;     // 0-based, nonempty
};

/// Tests every `test` row against the `calib` rows on the first B columns.
/// Component m is kept when its adjusted p-value is below alpha (for
/// Bonferroni: raw p < alpha / B). Adjusted p-values land in `adjusted`
/// (rows = scores rows) when given.
std::vector<Flagged> confirm(const MatrixXd& scores, const std::vector<std::size_t>& test,
                             const std::vector<std::size_t>& calib, int B, double alpha,
                             Multiplicity method = Multiplicity::kBonferroni,
                             MatrixXd* adjusted = nullptr, MatrixXd* raw = nullptr);

struct DetectOptions {
  double alpha1 = 0.10;
  double alpha = 0.05;
  Multiplicity multiplicity = Multiplicity::kBonferroni;
  std::uint64_t seed = 0;
};

struct AnomalyReport {
  int cluster = 0;
  int B = 0;
  double alpha1 = 0.0;
  double alpha = 0.0;
  Multiplicity multiplicity = Multiplicity::kBonferroni;
  SplitPlan split;
  std::vector<int> half;                 // per row: 1 or 2
  std::vector<std::size_t> G1, G1c, G2, G2c;
  MatrixXd pvalues;                      // rows x B, adjusted, every row tested
  MatrixXd raw_pvalues;                  // rows x B, unadjusted
  std::vector<Flagged> A1;

  /// Clean calibration pool on the opposite half of row i.
  const std::vector<std::size_t>& cross_pool(std::size_t row) const { return half[row] == 1 ? G2c : G1c; }
  const Flagged* find(std::size_t row) const;
};

/// Split, screen and cross-confirm within one cluster. Rows of `scores` are
/// the cluster's subjects; trimmed rows are tested but never calibrate.
AnomalyReport detect_type1(const MatrixXd& scores, const std::vector<bool>& trimmed, int B,
                           const DetectOptions& options);

/// Equal-width or explicit windows (a_w, b_w]; the first is closed on the left.
struct WindowSet {
  std::vector<double> bounds;  // W + 1 increasing boundaries

  int W() const { return static_cast<int>(bounds.size()) - 1; }
  /// Window index of t, or -1 when outside [bounds.front(), bounds.back()].
  int locate(double t) const;
  static WindowSet equal_width(double t_min, double t_max, int W);
  static WindowSet explicit_bounds(std::vector<double> bounds);
};

struct WindowReport {
  WindowSet windows;
  MatrixXd window_means;     // W x p
  MatrixXd deviations;       // rows x W sup-norm deviations, NaN when unobserved
  MatrixXd raw_pvalues;      // rows x W, NaN when unobserved or pool empty
  MatrixXd pvalues;          // rows x W, min(1, W p)
  std::vector<Flagged> A2;   // components = flagged windows (0-based)
  double alpha = 0.0;

  const Flagged* find(std::size_t row) const;
};

/// Window deviations and cross-half calibrated p-values. `cluster_data`
/// rows line up with the report rows; `means` are the cluster mean curves.
WindowReport window_profile(const Dataset& cluster_data, const std::vector<VectorXd>& means,
                            const EvalGrid& grid, const AnomalyReport& report,
                            const WindowSet& windows, double alpha);

/// Long-format mode-of-variation curves.
struct PlotRow {
  double t = 0.0;
  int dim = 0;
  std::string series_id;
  std::string role;   // mean, cohort, subject
  double value = 0.0;
};

struct PlotWindow {
  int w = 0;
  double a = 0.0;
  double b = 0.0;
  bool flagged = false;
};

struct PlotBundle {
  int component = 0;
  std::vector<PlotRow> rows;
  std::vector<PlotWindow> windows;
};

/// Curves mu, mu + rho_jm psi_m for the clean cohort and mu + rho_im psi_m
/// for the subject, on the interior grid (first and last 5% dropped).
PlotBundle mode_of_variation_data(const MfpcaModel& model, const std::vector<VectorXd>& means,
                                  const MatrixXd& rho, const std::vector<std::string>& ids,
                                  std::size_t subject, int component, const std::vector<int>& S_i,
                                  const std::vector<std::size_t>& cohort, const WindowSet& windows,
                                  const std::vector<int>& W_i);

}  // namespace sfda
