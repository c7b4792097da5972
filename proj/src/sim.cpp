#include "sfda/sim.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sfda {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Dataset sparse_dataset(const StudyCluster& c, const EvalGrid& grid, const StudyConfig& config,
                       std::mt19937_64& rng) {
  Dataset ds;
  ds.p = c.raw.p;
  ds.q = 0;
  ds.t_min = grid.t_min();
  ds.t_max = grid.t_max();
  for (std::size_t i = 0; i < c.ids.size(); ++i) {
    SubjectTrajectory s;
    s.subject_id = c.ids[i];
    if (config.source == StudySource::kFitted) {
      const MatrixXd& curve = c.curves[i];
      if (config.full_observation) {
        for (Index g = 0; g < grid.size(); ++g) {
          Observation o;
          o.t = grid.points[g];
          o.y.assign(curve.col(g).data(), curve.col(g).data() + curve.rows());
          s.records.push_back(std::move(o));
        }
      } else {
        const SparseSample sample = subsample_trajectory(grid, curve, config.tp, rng);
        for (std::size_t j = 0; j < sample.t.size(); ++j) {
          Observation o;
          o.t = sample.t[j];
          for (Index d = 0; d < sample.y.cols(); ++d) o.y.push_back(sample.y(static_cast<Index>(j), d));
          s.records.push_back(std::move(o));
        }
      }
    } else {
      const auto& recs = c.raw.subjects[i].records;
      std::vector<std::size_t> keep(recs.size());
      std::iota(keep.begin(), keep.end(), 0);
      if (!config.full_observation) {
        const auto K = std::min<std::size_t>(static_cast<std::size_t>(draw_truncated_poisson(config.tp, rng)), recs.size());
        std::shuffle(keep.begin(), keep.end(), rng);
        keep.resize(K);
        std::sort(keep.begin(), keep.end());
      }
      for (std::size_t j : keep) {
        Observation o;
        o.t = recs[j].t;
        o.y = recs[j].y;
        s.records.push_back(std::move(o));
      }
    }
    ds.subjects.push_back(std::move(s));
  }
  return ds;
}

/// Detection on one replicate; returns the flagged rows.
std::vector<std::size_t> replicate_flags(const Dataset& ds, const StudyCluster& c, const EvalGrid& grid,
                                         const StudyConfig& config) {
  std::vector<std::size_t> retained, cut;
  for (std::size_t i = 0; i < c.trimmed.size(); ++i) (c.trimmed[i] ? cut : retained).push_back(i);
  const MfpcaModel model = fit_dataset(ds.subset(retained), grid, config.fpca);
  MatrixXd rho(static_cast<Index>(c.ids.size()), model.components());
  for (std::size_t r = 0; r < retained.size(); ++r) rho.row(static_cast<Index>(retained[r])) = model.scores.row(static_cast<Index>(r));
  for (std::size_t i : cut) {
    const Dataset one = ds.subset({i});
    std::vector<SubjectSeries> per_dim;
    for (std::size_t d = 0; d < ds.p; ++d) per_dim.push_back(extract_dimension(one, d).front());
    rho.row(static_cast<Index>(i)) = score_new_subject(model, per_dim).transpose();
  }
  const int B = config.fixed_B > 0 ? std::min<int>(config.fixed_B, static_cast<int>(model.components()))
                                   : static_cast<int>(select_M(model.eigenvalues, config.b_fve));
  DetectOptions opts = config.detect;
  opts.seed = c.detect_seed;
  const AnomalyReport report = detect_type1(rho, c.trimmed, B, opts);
  std::vector<std::size_t> out;
  for (const auto& f : report.A1) out.push_back(f.subject);
  return out;
}

}  // namespace

int draw_truncated_poisson(const TruncatedPoisson& tp, std::mt19937_64& rng) {
  if (tp.lo > tp.hi || tp.lo < 0) throw ConfigError("truncation bounds must satisfy 0 <= lo <= hi");
  std::poisson_distribution<int> pois(tp.lambda);
  for (;;) {
    const int k = pois(rng);
    if (k >= tp.lo && k <= tp.hi) return k;
  }
}

SparseSample subsample_trajectory(const EvalGrid& grid, const MatrixXd& curves, const TruncatedPoisson& tp,
                                  std::mt19937_64& rng) {
  if (grid.size() < tp.hi) throw ConfigError("grid has fewer points than the subsample maximum");
  const int K = draw_truncated_poisson(tp, rng);
  std::vector<Index> all(static_cast<std::size_t>(grid.size()));
  std::iota(all.begin(), all.end(), 0);
  SparseSample s;
  std::sample(all.begin(), all.end(), std::back_inserter(s.grid_index), K, rng);
  std::sort(s.grid_index.begin(), s.grid_index.end());
  s.y.resize(K, curves.rows());
  for (int j = 0; j < K; ++j) {
    const Index g = s.grid_index[static_cast<std::size_t>(j)];
    s.t.push_back(grid.points[g]);
    s.y.row(j) = curves.col(g).transpose();
  }
  return s;
}

SimulationStudy run_study(const EvalGrid& grid, const std::vector<StudyCluster>& clusters,
                          const StudyConfig& config) {
  if (config.S < 1) throw ConfigError("replicate count must be >= 1");
  SimulationStudy study;
  study.S = config.S;
  for (const auto& c : clusters) {
    StudyClusterResult r;
    r.cluster = c.cluster;
    for (std::size_t i : c.base_anomalies) r.base_ids.push_back(c.ids[i]);
    r.flags.assign(c.base_anomalies.size(), std::vector<int>(static_cast<std::size_t>(config.S), 0));
    r.failed.assign(static_cast<std::size_t>(config.S), 0);
    r.recall.assign(static_cast<std::size_t>(config.S), kNaN);
    study.clusters.push_back(std::move(r));
  }
  const std::size_t jobs = static_cast<std::size_t>(config.S) * clusters.size();
  parallel_for(jobs, worker_count(), [&](std::size_t job) {
    const std::size_t s = job / clusters.size();
    const std::size_t l = job % clusters.size();
    const StudyCluster& c = clusters[l];
    StudyClusterResult& r = study.clusters[l];
    std::mt19937_64 rng(derive_seed(derive_seed(config.seed, "replicate", s), "cluster",
                                    static_cast<std::uint64_t>(c.cluster)));
    try {
      const Dataset ds = sparse_dataset(c, grid, config, rng);
      const auto flagged = replicate_flags(ds, c, grid, config);
      int hits = 0;
      for (std::size_t a = 0; a < c.base_anomalies.size(); ++a) {
        const bool hit = std::binary_search(flagged.begin(), flagged.end(), c.base_anomalies[a]);
        r.flags[a][s] = hit ? 1 : 0;
        hits += hit ? 1 : 0;
      }
      if (!c.base_anomalies.empty()) r.recall[s] = static_cast<double>(hits) / static_cast<double>(c.base_anomalies.size());
    } catch (const DataError& e) {
      r.failed[s] = 1;
      spdlog::warn("simulation: replicate {} of cluster {} failed: {}", s + 1, c.cluster + 1, e.what());
    }
  });
  study.tests = rank_tests(study);
  return study;
}

RecallTables recall_and_hit_rates(const SimulationStudy& study) {
  RecallTables out;
  for (const auto& c : study.clusters) {
    int ok = 0;
    for (int s = 0; s < study.S; ++s) {
      if (c.failed[s]) continue;
      ++ok;
      out.recall.push_back({c.cluster, s, c.recall[s]});
    }
    for (std::size_t a = 0; a < c.base_ids.size(); ++a) {
      int hits = 0;
      for (int s = 0; s < study.S; ++s) {
        if (!c.failed[s]) hits += c.flags[a][s];
      }
      out.detection.push_back({c.cluster, c.base_ids[a], ok ? static_cast<double>(hits) / ok : kNaN});
    }
  }
  return out;
}

std::vector<TestResult> rank_tests(const SimulationStudy& study) {
  std::vector<std::vector<double>> samples;
  std::vector<std::string> names;
  std::vector<const StudyClusterResult*> used;
  for (const auto& c : study.clusters) {
    std::vector<double> v;
    for (int s = 0; s < study.S; ++s) {
      if (!c.failed[s] && !std::isnan(c.recall[s])) v.push_back(c.recall[s]);
    }
    if (v.empty()) continue;
    samples.push_back(std::move(v));
    names.push_back("cluster" + std::to_string(c.cluster + 1));
    used.push_back(&c);
  }
  std::vector<TestResult> out;
  if (samples.size() < 2) return out;
  TestResult kw = kruskal_wallis(samples);
  kw.groups = "all";
  out.push_back(kw);
  for (auto& t : pairwise_wilcoxon(samples, names)) out.push_back(std::move(t));
  std::vector<std::vector<double>> rows;
  for (int s = 0; s < study.S; ++s) {
    std::vector<double> row;
    for (const auto* c : used) {
      if (c->failed[s] || std::isnan(c->recall[s])) break;
      row.push_back(c->recall[s]);
    }
    if (row.size() == used.size()) rows.push_back(std::move(row));
  }
  if (!rows.empty()) {
    TestResult f = friedman(rows);
    f.groups = "all";
    out.push_back(f);
  }
  return out;
}

}  // namespace sfda
