#pragma once

#include "sfda/dataset.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sfda {

/// Clustered sparse functional data with planted score-shift anomalies.
/// Dimension d of a cluster-c subject follows
///   mu_c^(d)(t) + sum_k xi_k phi_k(t) + noise,
/// phi_1 = sqrt(2) sin(2 pi t), phi_2 = sqrt(2) cos(2 pi t) on [0, 1].
struct SyntheticConfig {
  std::vector<int> cluster_sizes = {200, 200};
  std::size_t p = 2;
  std::vector<double> eigenvalues = {1.0, 0.25};
  double noise_sd = 0.1;
  int obs_lo = 6;
  int obs_hi = 12;
  double cluster_gap = 4.0;                  // mean level step between clusters
  std::vector<double> anomaly_fraction = {0.05, 0.05};
  std::vector<double> anomaly_shift = {8.0, 8.0};  // in sd units of component 1
  bool attach_text = true;
  std::uint64_t seed = 1;
};

struct SyntheticData {
  std::vector<RawRecord> records;
  CovariateTable covariates;                 // z1 = cluster indicator + noise
  std::vector<std::string> ids;
  std::vector<int> cluster;                  // true cluster per id
  std::vector<std::string> anomalous_ids;
};

SyntheticData make_synthetic(const SyntheticConfig& config);

/// Writes records as JSONL (vector plus optional text) and covariates as CSV.
void write_records_jsonl(const std::vector<RawRecord>& records, const std::string& path);
void write_covariates_csv(const CovariateTable& covariates, const std::string& path);

}  // namespace sfda
