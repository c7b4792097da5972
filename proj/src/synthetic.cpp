#include "sfda/synthetic.hpp"

#include "sfda/csv.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace sfda {

namespace {

const std::vector<std::string> kPraise = {
    "works as described and arrived on time", "great value for the price", "easy to use and sturdy",
    "exactly what I needed for the garden", "nice finish and solid build", "happy with this purchase"};

const std::vector<std::string> kComplaint = {
    "poor quality plastic cracked after a week", "stopped working, poor quality overall",
    "leaks fuel everywhere after first use", "poor value for money, feels cheap",
    "arrived broken and support never answered", "leaks fuel from the cap"};

const std::vector<std::string> kItems = {"chainsaw", "leaf blower", "hedge trimmer", "lawn mower",
                                        "garden hose", "pruning shears", "string trimmer", "tiller"};

}  // namespace

SyntheticData make_synthetic(const SyntheticConfig& config) {
  const std::size_t C = config.cluster_sizes.size();
  if (config.anomaly_fraction.size() != C || config.anomaly_shift.size() != C) {
    throw ConfigError("synthetic: per-cluster vectors differ in length");
  }
  if (config.obs_lo < 1 || config.obs_hi < config.obs_lo) throw ConfigError("synthetic: bad observation range");
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> n_obs(config.obs_lo, config.obs_hi);
  const double two_pi = 2.0 * std::numbers::pi;
  auto phi = [&](std::size_t k, double t) {
    return std::numbers::sqrt2 * (k == 0 ? std::sin(two_pi * t) : std::cos(two_pi * t));
  };

  SyntheticData out;
  int serial = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const int n = config.cluster_sizes[c];
    const int n_anom = static_cast<int>(std::round(config.anomaly_fraction[c] * n));
    for (int i = 0; i < n; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "s%04d", serial++);
      const bool anomalous = i < n_anom;
      out.ids.push_back(id);
      out.cluster.push_back(static_cast<int>(c));
      if (anomalous) out.anomalous_ids.push_back(id);
      out.covariates[id] = {static_cast<double>(c) + 0.3 * z(rng)};

      // Per-dimension scores; the anomaly shifts component 1 of dimension 0.
      std::vector<std::vector<double>> xi(config.p, std::vector<double>(config.eigenvalues.size()));
      for (std::size_t d = 0; d < config.p; ++d) {
        for (std::size_t k = 0; k < config.eigenvalues.size(); ++k) xi[d][k] = std::sqrt(config.eigenvalues[k]) * z(rng);
      }
      if (anomalous) xi[0][0] += config.anomaly_shift[c] * std::sqrt(config.eigenvalues[0]);

      const int m = n_obs(rng);
      std::vector<double> times(static_cast<std::size_t>(m));
      for (auto& t : times) t = std::round(unif(rng) * 1000.0) / 1000.0;
      std::sort(times.begin(), times.end());
      for (double t : times) {
        RawRecord r;
        r.subject_id = id;
        r.timestamp = t;
        std::vector<double> y(config.p);
        for (std::size_t d = 0; d < config.p; ++d) {
          const double level = config.cluster_gap * static_cast<double>(c) * (d == 0 ? 1.0 : -0.5);
          double v = level + 0.5 * std::sin(two_pi * t + static_cast<double>(d));
          for (std::size_t k = 0; k < config.eigenvalues.size(); ++k) v += xi[d][k] * phi(k, t);
          v += config.noise_sd * z(rng);
          y[d] = std::round(v * 1e6) / 1e6;
        }
        r.vector = y;
        if (config.attach_text) {
          const auto& pool = anomalous ? kComplaint : kPraise;
          const auto& item = kItems[static_cast<std::size_t>(rng() % kItems.size())];
          const auto& first = pool[static_cast<std::size_t>(rng() % pool.size())];
          const auto& second = pool[static_cast<std::size_t>(rng() % pool.size())];
          r.text = "The " + item + " " + first + "; " + second + ".";
          r.metadata["title"] = anomalous ? "disappointed" : "satisfied";
        }
        out.records.push_back(std::move(r));
      }
    }
  }
  return out;
}

void write_records_jsonl(const std::vector<RawRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["subject_id"] = r.subject_id;
    j["timestamp"] = r.timestamp;
    if (r.vector) j["vector"] = *r.vector;
    if (r.text) j["text"] = *r.text;
    if (!r.metadata.empty()) j["metadata"] = r.metadata;
    out << j.dump() << '\n';
  }
}

void write_covariates_csv(const CovariateTable& covariates, const std::string& path) {
  std::size_t q = covariates.empty() ? 0 : covariates.begin()->second.size();
  std::vector<std::string> header = {"subject_id"};
  for (std::size_t c = 0; c < q; ++c) header.push_back("z" + std::to_string(c + 1));
  CsvWriter w(header);
  for (const auto& [id, z] : covariates) {
    std::vector<std::string> row = {id};
    for (double v : z) row.push_back(format_double(v));
    w.row(row);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << w.str();
}

}  // namespace sfda
