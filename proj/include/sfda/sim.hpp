#pragma once

#include "sfda/anomaly.hpp"
#include "sfda/mfpca.hpp"
#include "sfda/rank_tests.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sfda {

struct TruncatedPoisson {
  double lambda = 10.0;
  int lo = 5;
  int hi = 15;
};

/// Exact draw by rejection from Poisson(lambda) until lo <= K <= hi.
int draw_truncated_poisson(const TruncatedPoisson& tp, std::mt19937_64& rng);

struct SparseSample {
  std::vector<Index> grid_index;  // sorted, distinct
  std::vector<double> t;
  MatrixXd y;                     // K x p
};

/// Draws K from the truncated Poisson and K distinct grid points uniformly
/// without replacement; `curves` is p x G.
SparseSample subsample_trajectory(const EvalGrid& grid, const MatrixXd& curves, const TruncatedPoisson& tp,
                                  std::mt19937_64& rng);

enum class StudySource { kFitted, kRaw };

/// Everything the study needs about one base cluster.
struct StudyCluster {
  int cluster = 0;
  std::vector<std::string> ids;
  std::vector<bool> trimmed;
  std::vector<MatrixXd> curves;          // fitted p x G curves per row
  Dataset raw;                           // raw observations, rows aligned with ids
  std::vector<std::size_t> base_anomalies;
  std::uint64_t detect_seed = 0;         // split seed of the base run
};

struct StudyConfig {
  int S = 50;
  std::uint64_t seed = 0;
  TruncatedPoisson tp;
  StudySource source = StudySource::kFitted;
  bool full_observation = false;         // keep every point instead of subsampling
  FpcaConfig fpca;
  DetectOptions detect;
  double b_fve = 0.90;
  int fixed_B = 0;                       // > 0 overrides the FVE choice of B
};

struct StudyClusterResult {
  int cluster = 0;
  std::vector<std::string> base_ids;
  std::vector<std::vector<int>> flags;   // base anomaly x replicate, 0/1
  std::vector<int> failed;               // per replicate, 0/1
  std::vector<double> recall;            // per replicate, NaN when failed or no anomalies
};

struct SimulationStudy {
  int S = 0;
  std::vector<StudyClusterResult> clusters;
  std::vector<TestResult> tests;
};

SimulationStudy run_study(const EvalGrid& grid, const std::vector<StudyCluster>& clusters,
                          const StudyConfig& config);

struct RecallRow {
  int cluster = 0;
  int replicate = 0;
  double recall = 0.0;
};

struct DetectionRow {
  int cluster = 0;
  std::string subject_id;
  double probability = 0.0;
};

struct RecallTables {
  std::vector<RecallRow> recall;
  std::vector<DetectionRow> detection;
};

RecallTables recall_and_hit_rates(const SimulationStudy& study);

/// Kruskal-Wallis across cluster recall samples, pairwise Wilcoxon with BH,
/// Friedman over replicates that succeeded in every cluster.
std::vector<TestResult> rank_tests(const SimulationStudy& study);

}  // namespace sfda
