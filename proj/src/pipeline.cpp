#include "sfda/pipeline.hpp"

#include "sfda/csv.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace sfda {

namespace {

using nlohmann::ordered_json;

template <typename T>
void take(const ordered_json& j, const char* key, T& field, std::set<std::string>& seen) {
  seen.insert(key);
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

std::string fmt(double v) { return format_double(v); }

/// Collects outputs under `<name>.partial` and renames them on success.
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& name, const std::string& content) {
    const auto path = dir_ / (name + ".partial");
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error("cannot write " + path.string());
    files_.push_back({name, sha256_hex(content), content.size()});
  }

  std::vector<OutputFile> commit() {
    for (const auto& f : files_) {
      std::filesystem::rename(dir_ / (f.path + ".partial"), dir_ / f.path);
    }
    return files_;
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<OutputFile> files_;
};

class StageTimer {
 public:
  StageTimer(std::string name, std::vector<std::pair<std::string, double>>& sink)
      : name_(std::move(name)), sink_(sink), start_(std::chrono::steady_clock::now()) {
    spdlog::info("stage {}: start", name_);
  }
  ~StageTimer() {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    sink_.emplace_back(name_, s);
    spdlog::info("stage {}: {:.3f}s", name_, s);
  }

 private:
  std::string name_;
  std::vector<std::pair<std::string, double>>& sink_;
  std::chrono::steady_clock::time_point start_;
};

template <typename Fn>
auto in_stage(const std::string& name, std::vector<std::pair<std::string, double>>& times, Fn&& fn) {
  StageTimer timer(name, times);
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e, exit_code_for(e));
  }
}

std::string pad_id(const std::string& id) {
  std::string out;
  for (char c : id) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(';');
    out += std::to_string(v[i] + 1);
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  if (records.empty()) throw ConfigError("no records path given");
  parse_record_format(records_format);
  parse_backend_kind(backend);
  PromptSpec::by_name(embed_spec);
  parse_multiplicity(multiplicity);
  parse_intent_mode(intent_mode);
  if (!(alpha1 > alpha)) throw ConfigError("alpha1 (" + fmt(alpha1) + ") must exceed alpha (" + fmt(alpha) + ")");
  if (!(alpha > 0 && alpha < 1) || !(alpha1 > 0 && alpha1 < 1)) throw ConfigError("alpha levels must be in (0, 1)");
  if (!(window_alpha > 0 && window_alpha < 1)) throw ConfigError("window alpha must be in (0, 1)");
  if (!(tau >= 0 && tau < 1)) throw ConfigError("tau must be in [0, 1)");
  for (double f : {fve_dim, fve_multi, b_fve}) {
    if (!(f > 0 && f <= 1)) throw ConfigError("FVE thresholds must be in (0, 1]");
  }
  if (grid_size < 2) throw ConfigError("grid_size must be >= 2");
  if (k_max < 1) throw ConfigError("k_max must be >= 1");
  if (K < 0 || (K == 0 && K_range.empty())) throw ConfigError("K must be positive or K_range nonempty");
  if (restarts < 1 || max_iter < 1 || n_boot < 0) throw ConfigError("restarts/max_iter must be >= 1, n_boot >= 0");
  if (window_bounds.empty() && W < 1) throw ConfigError("W must be >= 1");
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (sim_S < 1 || sim_lo > sim_hi || sim_lo < 0) throw ConfigError("invalid simulation settings");
  if (sim_source != "fitted" && sim_source != "raw") throw ConfigError("sim_source must be fitted or raw");
  if (max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["records"] = records;
  j["records_format"] = records_format;
  j["covariates"] = covariates;
  j["embed_spec"] = embed_spec;
  j["backend"] = backend;
  j["cache_dir"] = cache_dir;
  j["base_url"] = base_url;
  j["model"] = model;
  j["token_env"] = token_env;
  j["temperature"] = temperature;
  j["max_concurrency"] = max_concurrency;
  j["rate_limit"] = rate_limit;
  j["grid_size"] = grid_size;
  j["fve_dim"] = fve_dim;
  j["k_max"] = k_max;
  j["fve_multi"] = fve_multi;
  j["K"] = K;
  j["K_range"] = K_range;
  j["tau"] = tau;
  j["restarts"] = restarts;
  j["max_iter"] = max_iter;
  j["n_boot"] = n_boot;
  j["min_cluster_size"] = min_cluster_size;
  j["alpha1"] = alpha1;
  j["alpha"] = alpha;
  j["window_alpha"] = window_alpha;
  j["W"] = W;
  j["window_bounds"] = window_bounds;
  j["multiplicity"] = multiplicity;
  j["b_fve"] = b_fve;
  j["intent_mode"] = intent_mode;
  j["top_k"] = top_k;
  j["sim_S"] = sim_S;
  j["sim_lambda"] = sim_lambda;
  j["sim_lo"] = sim_lo;
  j["sim_hi"] = sim_hi;
  j["sim_source"] = sim_source;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["svg"] = svg;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) { return from_json(text, RunConfig{}); }

RunConfig RunConfig::from_json(const std::string& text, RunConfig c) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::set<std::string> seen;
  take(j, "records", c.records, seen);
  take(j, "records_format", c.records_format, seen);
  take(j, "covariates", c.covariates, seen);
  take(j, "embed_spec", c.embed_spec, seen);
  take(j, "backend", c.backend, seen);
  take(j, "cache_dir", c.cache_dir, seen);
  take(j, "base_url", c.base_url, seen);
  take(j, "model", c.model, seen);
  take(j, "token_env", c.token_env, seen);
  take(j, "temperature", c.temperature, seen);
  take(j, "max_concurrency", c.max_concurrency, seen);
  take(j, "rate_limit", c.rate_limit, seen);
  take(j, "grid_size", c.grid_size, seen);
  take(j, "fve_dim", c.fve_dim, seen);
  take(j, "k_max", c.k_max, seen);
  take(j, "fve_multi", c.fve_multi, seen);
  take(j, "K", c.K, seen);
  take(j, "K_range", c.K_range, seen);
  take(j, "tau", c.tau, seen);
  take(j, "restarts", c.restarts, seen);
  take(j, "max_iter", c.max_iter, seen);
  take(j, "n_boot", c.n_boot, seen);
  take(j, "min_cluster_size", c.min_cluster_size, seen);
  take(j, "alpha1", c.alpha1, seen);
  take(j, "alpha", c.alpha, seen);
  take(j, "window_alpha", c.window_alpha, seen);
  take(j, "W", c.W, seen);
  take(j, "window_bounds", c.window_bounds, seen);
  take(j, "multiplicity", c.multiplicity, seen);
  take(j, "b_fve", c.b_fve, seen);
  take(j, "intent_mode", c.intent_mode, seen);
  take(j, "top_k", c.top_k, seen);
  take(j, "sim_S", c.sim_S, seen);
  take(j, "sim_lambda", c.sim_lambda, seen);
  take(j, "sim_lo", c.sim_lo, seen);
  take(j, "sim_hi", c.sim_hi, seen);
  take(j, "sim_source", c.sim_source, seen);
  take(j, "seed", c.seed, seen);
  take(j, "output_dir", c.output_dir, seen);
  take(j, "svg", c.svg, seen);
  for (const auto& [key, value] : j.items()) {
    if (!seen.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Stage parse_stage(std::string_view name) {
  static const std::map<std::string, Stage, std::less<>> kStages = {
      {"embed", Stage::kEmbed},          {"fit", Stage::kFit},
      {"cluster", Stage::kCluster},      {"detect", Stage::kDetect},
      {"windows", Stage::kWindows},      {"plot-data", Stage::kPlotData},
      {"profile", Stage::kProfile},      {"export-features", Stage::kExportFeatures},
      {"simulate", Stage::kSimulate},    {"run", Stage::kAll}};
  const auto it = kStages.find(name);
  if (it == kStages.end()) throw ConfigError("unknown stage '" + std::string(name) + "'");
  return it->second;
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kEmbed: return "embed";
    case Stage::kFit: return "fit";
    case Stage::kCluster: return "cluster";
    case Stage::kDetect: return "detect";
    case Stage::kWindows: return "windows";
    case Stage::kPlotData: return "plot-data";
    case Stage::kProfile: return "profile";
    case Stage::kExportFeatures: return "export-features";
    case Stage::kSimulate: return "simulate";
    case Stage::kAll: return "run";
  }
  return "run";
}

int exit_code_for(const std::exception& e) {
  if (const auto* s = dynamic_cast<const StageError*>(&e)) return s->exit_code;
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const BackendError*>(&e)) return 4;
  return 5;
}

std::string RunManifest::to_json(const RunConfig& config) const {
  ordered_json j;
  j["tool"] = "sfda";
  j["version"] = "1.0.0";
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["config"] = ordered_json::parse(config.to_json());
  j["embed_failures"] = embed_failures;
  j["backend_calls"] = backend_calls;
  auto stages = ordered_json::array();
  for (const auto& [name, s] : stage_seconds) stages.push_back({{"stage", name}, {"seconds", s}});
  j["stages"] = stages;
  auto files = ordered_json::array();
  for (const auto& f : outputs) files.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  j["outputs"] = files;
  return j.dump(2);
}

std::string render_bundle_svg(const PlotBundle& bundle, const std::string& title) {
  int dims = 0;
  double t0 = 1e300, t1 = -1e300;
  for (const auto& r : bundle.rows) {
    dims = std::max(dims, r.dim + 1);
    t0 = std::min(t0, r.t);
    t1 = std::max(t1, r.t);
  }
  const double panel_w = 360, panel_h = 240, pad = 30;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << dims * (panel_w + pad) + pad << "\" height=\""
      << panel_h + 3 * pad << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<text x=\"" << pad << "\" y=\"16\">" << title << "</text>\n";
  for (int d = 0; d < dims; ++d) {
    double lo = 1e300, hi = -1e300;
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    std::map<std::string, std::string> role;
    for (const auto& r : bundle.rows) {
      if (r.dim != d) continue;
      lo = std::min(lo, r.value);
      hi = std::max(hi, r.value);
      series[r.role + ":" + r.series_id].emplace_back(r.t, r.value);
      role[r.role + ":" + r.series_id] = r.role;
    }
    if (hi <= lo) hi = lo + 1;
    const double x0 = pad + d * (panel_w + pad), y0 = 2 * pad;
    auto X = [&](double t) { return x0 + (t - t0) / std::max(t1 - t0, 1e-12) * panel_w; };
    auto Y = [&](double v) { return y0 + panel_h - (v - lo) / (hi - lo) * panel_h; };
    for (const auto& w : bundle.windows) {
      if (!w.flagged) continue;
      const double a = std::max(w.a, t0), b = std::min(w.b, t1);
      if (b > a) {
        svg << "<rect x=\"" << X(a) << "\" y=\"" << y0 << "\" width=\"" << X(b) - X(a) << "\" height=\"" << panel_h
            << "\" fill=\"#f4cccc\"/>\n";
      }
    }
    svg << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << panel_w << "\" height=\"" << panel_h
        << "\" fill=\"none\" stroke=\"#444\"/>\n";
    svg << "<text x=\"" << x0 << "\" y=\"" << y0 - 6 << "\">dimension " << d + 1 << "</text>\n";
    for (const auto& [key, pts] : series) {
      const std::string& r = role[key];
      const char* colour = r == "mean" ? "#000000" : r == "subject" ? "#cc0000" : "#9fb6d9";
      const char* width = r == "cohort" ? "0.8" : "2";
      svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"" << width << "\" points=\"";
      for (const auto& [t, v] : pts) svg << X(t) << ',' << Y(v) << ' ';
      svg << "\"/>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

RunManifest run_pipeline(const RunConfig& config, Stage last, std::shared_ptr<CompletionClient> client) {
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw StageError("config", e, 2);
  }
  const bool all = last == Stage::kAll;
  const bool need_fit = last != Stage::kEmbed;
  const bool need_cluster = need_fit && last != Stage::kFit;
  const bool need_detect = all || last == Stage::kDetect || last == Stage::kWindows || last == Stage::kPlotData ||
                           last == Stage::kProfile || last == Stage::kSimulate;
  const bool need_windows = all || last == Stage::kWindows || last == Stage::kPlotData || last == Stage::kProfile;
  const bool need_plot = all || last == Stage::kPlotData;
  const bool need_profile = all || last == Stage::kProfile;
  const bool need_export = all || last == Stage::kExportFeatures;
  const bool need_sim = last == Stage::kSimulate;

  RunManifest manifest;
  manifest.seed = config.seed;
  manifest.config_hash = sha256_hex(config.to_json());
  auto& times = manifest.stage_seconds;
  OutputSet out(config.output_dir);

  // Ingest and embed.
  const Dataset ds = in_stage("embed", times, [&] {
    auto records = load_records(config.records, parse_record_format(config.records_format));
    CovariateTable cov;
    if (!config.covariates.empty()) cov = load_covariates(config.covariates);
    const bool needs = std::any_of(records.begin(), records.end(), [](const RawRecord& r) { return !r.vector; });
    if (needs) {
      const BackendKind kind = parse_backend_kind(config.backend);
      std::shared_ptr<CompletionClient> live = client;
      if (kind == BackendKind::kLive && !live) {
        live = std::make_shared<HttpCompletionClient>(
            HttpBackendConfig{config.base_url, config.model, config.token_env, config.temperature, 60});
      }
      auto cache = std::make_shared<ResponseCache>(config.cache_dir);
      Embedder embedder(PromptSpec::by_name(config.embed_spec), kind, live, cache, RetryPolicy{},
                        config.rate_limit);
      auto batch = embedder.embed_records(records, config.max_concurrency);
      manifest.embed_failures = batch.failures.size();
      manifest.backend_calls = embedder.backend_calls();
      if (!batch.failures.empty()) {
        CsvWriter w({"subject_id", "timestamp", "line", "error"});
        for (const auto& [rec, err] : batch.failures) {
          w.row({rec.subject_id, fmt(rec.timestamp), std::to_string(rec.line), err});
        }
        out.write("embed_failures.csv", w.str());
      }
      records = std::move(batch.records);
    }
    Dataset built = build_dataset(records, cov);
    std::vector<std::string> header = {"subject_id", "timestamp"};
    for (std::size_t d = 0; d < built.p; ++d) header.push_back("v" + std::to_string(d + 1));
    CsvWriter w(header);
    for (const auto& s : built.subjects) {
      for (const auto& o : s.records) {
        std::vector<std::string> row = {s.subject_id, fmt(o.t)};
        for (double v : o.y) row.push_back(fmt(v));
        w.row(row);
      }
    }
    out.write("embeddings.csv", w.str());
    return built;
  });

  EvalGrid grid;
  MfpcaModel pooled;
  FpcaConfig fpca;
  fpca.grid_size = config.grid_size;
  fpca.ufpca.fve_threshold = config.fve_dim;
  fpca.ufpca.k_max = config.k_max;
  fpca.mfpca_fve = config.fve_multi;
  if (need_fit) {
    in_stage("fit", times, [&] {
      grid = make_grid(ds, config.grid_size);
      pooled = fit_dataset(ds, grid, fpca);
      std::vector<std::string> header = {"subject_id"};
      for (Index m = 0; m < pooled.components(); ++m) header.push_back("rho_" + std::to_string(m + 1));
      CsvWriter scores(header);
      for (std::size_t i = 0; i < ds.size(); ++i) {
        std::vector<std::string> row = {ds.subjects[i].subject_id};
        for (Index m = 0; m < pooled.components(); ++m) row.push_back(fmt(pooled.scores(static_cast<Index>(i), m)));
        scores.row(row);
      }
      out.write("mfpc_scores.csv", scores.str());
      CsvWriter eig({"m", "eigenvalue", "fve", "selected"});
      double acc = 0.0;
      const double total = pooled.eigenvalues.sum();
      for (Index m = 0; m < pooled.components(); ++m) {
        acc += pooled.eigenvalues[m];
        eig.row({std::to_string(m + 1), fmt(pooled.eigenvalues[m]), fmt(acc / total), m < pooled.M_selected ? "true" : "false"});
      }
      out.write("eigenvalues.csv", eig.str());
      CsvWriter ef({"t", "dim", "m", "value"});
      for (Index m = 0; m < pooled.components(); ++m) {
        for (std::size_t d = 0; d < pooled.p(); ++d) {
          for (Index g = 0; g < grid.size(); ++g) {
            ef.row({fmt(grid.points[g]), std::to_string(d + 1), std::to_string(m + 1),
                    fmt(pooled.psi[m](static_cast<Index>(d), g))});
          }
        }
      }
      out.write("eigenfunctions.csv", ef.str());
      CsvWriter uf({"dim", "K", "noise_var", "mean_bandwidth", "cov_bandwidth", "fve"});
      for (std::size_t d = 0; d < pooled.p(); ++d) {
        const auto& u = pooled.per_dim[d];
        uf.row({std::to_string(d + 1), std::to_string(u.K()), fmt(u.noise_var), fmt(u.mean_bandwidth),
                fmt(u.cov_bandwidth), fmt(u.fve[u.K() - 1])});
      }
      out.write("ufpca_summary.csv", uf.str());
      return 0;
    });
  }

  FeatureMatrix features;
  ClusterModel clusters;
  std::vector<ClusterFit> fits;
  if (need_cluster) {
    in_stage("cluster", times, [&] {
      features = build_features(pooled, ds);
      TrimmedKmeansOptions opts;
      opts.tau = config.tau;
      opts.restarts = config.restarts;
      opts.max_iter = config.max_iter;
      opts.seed = derive_seed(config.seed, "cluster");
      CsvWriter ksel({"K", "mean_silhouette", "chosen"});
      if (config.K > 0) {
        opts.K = config.K;
      } else {
        std::vector<int> range;
        for (int k : config.K_range) {
          if (k >= 2 && k <= static_cast<int>(ds.size()) - 1) range.push_back(k);
        }
        const KChoice choice = choose_K(features.whitened, range, opts);
        opts.K = choice.K;
        for (const auto& [k, w] : choice.widths) ksel.row({std::to_string(k), fmt(w), k == choice.K ? "true" : "false"});
      }
      out.write("k_selection.csv", ksel.str());
      clusters = trimmed_kmeans(features.whitened, opts);
      const VectorXd sil = silhouette(features.whitened, clusters);
      CsvWriter asg({"subject_id", "cluster", "trimmed", "silhouette"});
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const bool cut = clusters.assignment[i] == kTrimmed;
        asg.row({ds.subjects[i].subject_id, std::to_string(clusters.nearest[i] + 1), cut ? "true" : "false",
                 fmt(sil[static_cast<Index>(i)])});
      }
      out.write("assignments.csv", asg.str());
      std::vector<std::string> ch = {"cluster"};
      for (Index c = 0; c < clusters.centroids.cols(); ++c) ch.push_back("w" + std::to_string(c + 1));
      CsvWriter cen(ch);
      for (int k = 0; k < clusters.K; ++k) {
        std::vector<std::string> row = {std::to_string(k + 1)};
        for (Index c = 0; c < clusters.centroids.cols(); ++c) row.push_back(fmt(clusters.centroids(k, c)));
        cen.row(row);
      }
      out.write("centroids.csv", cen.str());
      CsvWriter stab({"cluster", "size", "jaccard"});
      VectorXd jac = VectorXd::Constant(clusters.K, std::numeric_limits<double>::quiet_NaN());
      if (config.n_boot > 0) jac = bootstrap_jaccard(features.whitened, clusters, config.n_boot, opts);
      for (int k = 0; k < clusters.K; ++k) {
        stab.row({std::to_string(k + 1), std::to_string(clusters.members(k).size()), fmt(jac[k])});
      }
      out.write("stability.csv", stab.str());

      fits = cluster_refit(ds, clusters, grid, fpca, static_cast<std::size_t>(config.min_cluster_size));
      Index maxM = 0;
      for (const auto& f : fits) maxM = std::max(maxM, f.model.components());
      std::vector<std::string> sh = {"cluster", "subject_id", "trimmed"};
      for (Index m = 0; m < maxM; ++m) sh.push_back("rho_" + std::to_string(m + 1));
      CsvWriter cs(sh);
      for (const auto& f : fits) {
        for (std::size_t r = 0; r < f.subjects.size(); ++r) {
          std::vector<std::string> row = {std::to_string(f.cluster + 1), ds.subjects[f.subjects[r]].subject_id,
                                          f.trimmed[r] ? "true" : "false"};
          for (Index m = 0; m < maxM; ++m) row.push_back(m < f.rho.cols() ? fmt(f.rho(static_cast<Index>(r), m)) : "NA");
          cs.row(row);
        }
      }
      out.write("cluster_scores.csv", cs.str());
      return 0;
    });
  }

  std::vector<AnomalyReport> reports;
  std::vector<Dataset> cluster_data;
  if (need_detect) {
    in_stage("detect", times, [&] {
      DetectOptions opts;
      opts.alpha1 = config.alpha1;
      opts.alpha = config.alpha;
      opts.multiplicity = parse_multiplicity(config.multiplicity);
      for (const auto& f : fits) {
        opts.seed = derive_seed(config.seed, "detect", static_cast<std::uint64_t>(f.cluster));
        const int B = static_cast<int>(select_M(f.model.eigenvalues, config.b_fve));
        AnomalyReport r = detect_type1(f.rho, f.trimmed, B, opts);
        r.cluster = f.cluster;
        reports.push_back(std::move(r));
        cluster_data.push_back(ds.subset(f.subjects));
      }
      return 0;
    });
  }

  std::vector<WindowReport> window_reports;
  WindowSet windows;
  if (need_windows) {
    in_stage("windows", times, [&] {
      windows = config.window_bounds.empty() ? WindowSet::equal_width(ds.t_min, ds.t_max, config.W)
                                             : WindowSet::explicit_bounds(config.window_bounds);
      for (std::size_t c = 0; c < fits.size(); ++c) {
        window_reports.push_back(window_profile(cluster_data[c], fits[c].model.means(), grid, reports[c], windows,
                                                config.window_alpha));
      }
      CsvWriter w({"w", "a", "b"});
      for (int k = 0; k < windows.W(); ++k) {
        w.row({std::to_string(k + 1), fmt(windows.bounds[k]), fmt(windows.bounds[k + 1])});
      }
      out.write("windows.csv", w.str());
      return 0;
    });
  }

  if (need_detect) {
    in_stage("report", times, [&] {
      CsvWriter anomalies({"cluster", "subject_id", "trimmed", "half", "components", "windows"});
      for (std::size_t c = 0; c < fits.size(); ++c) {
        const auto& f = fits[c];
        const auto& r = reports[c];
        const WindowReport* wr = need_windows ? &window_reports[c] : nullptr;
        std::vector<std::string> header = {"user_id"};
        for (int m = 0; m < r.B; ++m) header.push_back("p_comp" + std::to_string(m + 1));
        if (wr) {
          for (int w = 0; w < wr->windows.W(); ++w) header.push_back("p_win" + std::to_string(w + 1));
        }
        CsvWriter pv(header);
        for (std::size_t row = 0; row < f.subjects.size(); ++row) {
          std::vector<std::string> fields = {ds.subjects[f.subjects[row]].subject_id};
          for (int m = 0; m < r.B; ++m) fields.push_back(fmt(r.pvalues(static_cast<Index>(row), m)));
          if (wr) {
            for (int w = 0; w < wr->windows.W(); ++w) fields.push_back(fmt(wr->pvalues(static_cast<Index>(row), w)));
          }
          pv.row(fields);
        }
        out.write("pvalues_cluster" + std::to_string(f.cluster + 1) + ".csv", pv.str());
        for (const auto& a : r.A1) {
          const Flagged* wf = wr ? wr->find(a.subject) : nullptr;
          anomalies.row({std::to_string(f.cluster + 1), ds.subjects[f.subjects[a.subject]].subject_id,
                         f.trimmed[a.subject] ? "true" : "false", std::to_string(r.half[a.subject]),
                         join_ints(a.components), wf ? join_ints(wf->components) : ""});
        }
      }
      out.write("anomalies.csv", anomalies.str());
      return 0;
    });
  }

  if (need_plot) {
    in_stage("plot-data", times, [&] {
      for (std::size_t c = 0; c < fits.size(); ++c) {
        const auto& f = fits[c];
        std::vector<std::string> ids;
        for (std::size_t s : f.subjects) ids.push_back(ds.subjects[s].subject_id);
        for (const auto& a : reports[c].A1) {
          const Flagged* wf = window_reports[c].find(a.subject);
          const std::vector<int> W_i = wf ? wf->components : std::vector<int>{};
          for (int m : a.components) {
            const PlotBundle b = mode_of_variation_data(f.model, f.model.means(), f.rho, ids, a.subject, m,
                                                        a.components, reports[c].cross_pool(a.subject), windows, W_i);
            const std::string stem = "plots/cluster" + std::to_string(f.cluster + 1) + "_" + pad_id(ids[a.subject]) +
                                     "_comp" + std::to_string(m + 1);
            CsvWriter rows({"t", "dim", "series_id", "role", "value"});
            for (const auto& r : b.rows) rows.row({fmt(r.t), std::to_string(r.dim + 1), r.series_id, r.role, fmt(r.value)});
            out.write(stem + ".csv", rows.str());
            CsvWriter wins({"w", "a_w", "b_w", "flagged"});
            for (const auto& w : b.windows) {
              wins.row({std::to_string(w.w + 1), fmt(w.a), fmt(w.b), w.flagged ? "true" : "false"});
            }
            out.write(stem + "_windows.csv", wins.str());
            if (config.svg) out.write(stem + ".svg", render_bundle_svg(b, stem.substr(6)));
          }
        }
      }
      return 0;
    });
  }

  if (need_profile) {
    in_stage("profile", times, [&] {
      std::vector<ProfiledRecord> records;
      for (std::size_t c = 0; c < fits.size(); ++c) {
        auto part = anomalous_records(fits[c].cluster, cluster_data[c], reports[c], window_reports[c]);
        records.insert(records.end(), part.begin(), part.end());
      }
      IntentState state;
      const IntentMode mode = parse_intent_mode(config.intent_mode);
      std::shared_ptr<CompletionClient> live = client;
      if (mode == IntentMode::kLlm && !live) {
        live = std::make_shared<HttpCompletionClient>(
            HttpBackendConfig{config.base_url, config.model, config.token_env, config.temperature, 60});
      }
      ResponseCache cache(config.cache_dir);
      const auto rows = profile_anomalies(records, state, mode, static_cast<std::size_t>(config.top_k), live.get(), &cache);
      CsvWriter w({"cluster", "window", "intent", "count"});
      for (const auto& r : rows) {
        w.row({std::to_string(r.cluster + 1), r.window >= 0 ? std::to_string(r.window + 1) : "NA", r.intent,
               std::to_string(r.count)});
      }
      out.write("intents.csv", w.str());
      out.write("intent_state.json", state.to_json() + "\n");
      return 0;
    });
  }

  if (need_export) {
    in_stage("export-features", times, [&] {
      std::vector<std::string> header = {"subject_id", "cluster", "trimmed"};
      for (std::size_t c = 0; c < ds.q; ++c) header.push_back("z" + std::to_string(c + 1));
      for (Index m = 0; m < pooled.M_selected; ++m) header.push_back("rho_" + std::to_string(m + 1));
      CsvWriter w(header);
      for (std::size_t i = 0; i < ds.size(); ++i) {
        std::vector<std::string> row = {ds.subjects[i].subject_id, std::to_string(clusters.nearest[i] + 1),
                                        clusters.assignment[i] == kTrimmed ? "true" : "false"};
        for (double z : ds.subjects[i].covariates) row.push_back(fmt(z));
        for (Index m = 0; m < pooled.M_selected; ++m) row.push_back(fmt(pooled.scores(static_cast<Index>(i), m)));
        w.row(row);
      }
      out.write("features.csv", w.str());
      return 0;
    });
  }

  if (need_sim) {
    in_stage("simulate", times, [&] {
      std::vector<StudyCluster> inputs;
      for (std::size_t c = 0; c < fits.size(); ++c) {
        const auto& f = fits[c];
        StudyCluster sc;
        sc.cluster = f.cluster;
        for (std::size_t s : f.subjects) sc.ids.push_back(ds.subjects[s].subject_id);
        sc.trimmed = f.trimmed;
        const auto means = f.model.means();
        for (std::size_t r = 0; r < f.subjects.size(); ++r) {
          sc.curves.push_back(reconstruct(f.model, f.rho.row(static_cast<Index>(r)).transpose(), f.model.components(), means));
        }
        sc.raw = cluster_data[c];
        for (const auto& a : reports[c].A1) sc.base_anomalies.push_back(a.subject);
        sc.detect_seed = derive_seed(config.seed, "detect", static_cast<std::uint64_t>(f.cluster));
        inputs.push_back(std::move(sc));
      }
      StudyConfig sc;
      sc.S = config.sim_S;
      sc.seed = derive_seed(config.seed, "simulate");
      sc.tp = {config.sim_lambda, config.sim_lo, config.sim_hi};
      sc.source = config.sim_source == "raw" ? StudySource::kRaw : StudySource::kFitted;
      sc.fpca = fpca;
      sc.detect.alpha1 = config.alpha1;
      sc.detect.alpha = config.alpha;
      sc.detect.multiplicity = parse_multiplicity(config.multiplicity);
      sc.b_fve = config.b_fve;
      const SimulationStudy study = run_study(grid, inputs, sc);
      const RecallTables tables = recall_and_hit_rates(study);
      CsvWriter flags({"subject_id", "cluster", "replicate", "flag"});
      for (const auto& c : study.clusters) {
        for (std::size_t a = 0; a < c.base_ids.size(); ++a) {
          for (int s = 0; s < study.S; ++s) {
            if (c.failed[s]) continue;
            flags.row({c.base_ids[a], std::to_string(c.cluster + 1), std::to_string(s + 1), std::to_string(c.flags[a][s])});
          }
        }
      }
      out.write("sim_flags.csv", flags.str());
      CsvWriter recall({"cluster", "replicate", "value"});
      for (const auto& r : tables.recall) recall.row({std::to_string(r.cluster + 1), std::to_string(r.replicate + 1), fmt(r.recall)});
      out.write("sim_recall.csv", recall.str());
      CsvWriter det({"subject_id", "cluster", "prob"});
      for (const auto& d : tables.detection) det.row({d.subject_id, std::to_string(d.cluster + 1), fmt(d.probability)});
      out.write("sim_detection.csv", det.str());
      CsvWriter tests({"name", "groups", "statistic", "p", "p_adjusted"});
      for (const auto& t : study.tests) tests.row({t.name, t.groups, fmt(t.statistic), fmt(t.p), fmt(t.p_adjusted)});
      out.write("sim_tests.csv", tests.str());
      return 0;
    });
  }

  manifest.outputs = out.commit();
  const std::string text = manifest.to_json(config) + "\n";
  std::ofstream mf(std::filesystem::path(config.output_dir) / "manifest.json", std::ios::binary | std::ios::trunc);
  mf << text;
  return manifest;
}

}  // namespace sfda
