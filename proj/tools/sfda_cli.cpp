#include "sfda/pipeline.hpp"
#include "sfda/synthetic.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>
#include <optional>

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> records, records_format, covariates, output_dir, embed_spec, backend, cache_dir;
  std::optional<std::string> base_url, model, multiplicity, intent_mode;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> max_concurrency, threads;
  std::optional<double> rate_limit, alpha1, alpha, tau;
  std::optional<int> K, W, S;
  bool svg = false;
  bool quiet = false;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON run configuration");
  app->add_option("--records", o.records, "records file (JSONL or CSV)");
  app->add_option("--format", o.records_format, "records format: jsonl or csv");
  app->add_option("--covariates", o.covariates, "covariate CSV keyed by subject_id");
  app->add_option("--output-dir", o.output_dir, "output directory");
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("--embed-spec", o.embed_spec, "plutchik, toxicity or custom:<path>");
  app->add_option("--backend", o.backend, "live or offline");
  app->add_option("--cache-dir", o.cache_dir, "response cache directory");
  app->add_option("--base-url", o.base_url, "chat-completions base URL");
  app->add_option("--model", o.model, "model name");
  app->add_option("--max-concurrency", o.max_concurrency, "parallel backend requests");
  app->add_option("--rate-limit", o.rate_limit, "requests per second (0 = unlimited)");
  app->add_option("--threads", o.threads, "worker threads");
  app->add_option("--alpha1", o.alpha1, "screening level");
  app->add_option("--alpha", o.alpha, "confirmation level");
  app->add_option("--tau", o.tau, "trimming fraction");
  app->add_option("--K", o.K, "number of clusters (0 = silhouette)");
  app->add_option("--W", o.W, "number of equal-width windows");
  app->add_option("--multiplicity", o.multiplicity, "bonferroni or bh");
  app->add_option("--intent-mode", o.intent_mode, "lexical or llm");
  app->add_option("--replicates", o.S, "simulation replicates");
  app->add_flag("--svg", o.svg, "also write SVG plots");
  app->add_flag("-q,--quiet", o.quiet, "only log warnings");
}

sfda::RunConfig resolve(const Overrides& o) {
  sfda::RunConfig c = o.config.empty() ? sfda::RunConfig{} : sfda::RunConfig::from_file(o.config);
  if (o.records) c.records = *o.records;
  if (o.records_format) c.records_format = *o.records_format;
  if (o.covariates) c.covariates = *o.covariates;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.seed) c.seed = *o.seed;
  if (o.embed_spec) c.embed_spec = *o.embed_spec;
  if (o.backend) c.backend = *o.backend;
  if (o.cache_dir) c.cache_dir = *o.cache_dir;
  if (o.base_url) c.base_url = *o.base_url;
  if (o.model) c.model = *o.model;
  if (o.max_concurrency) c.max_concurrency = *o.max_concurrency;
  if (o.rate_limit) c.rate_limit = *o.rate_limit;
  if (o.alpha1) c.alpha1 = *o.alpha1;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.tau) c.tau = *o.tau;
  if (o.K) c.K = *o.K;
  if (o.W) c.W = *o.W;
  if (o.multiplicity) c.multiplicity = *o.multiplicity;
  if (o.intent_mode) c.intent_mode = *o.intent_mode;
  if (o.S) c.sim_S = *o.S;
  if (o.svg) c.svg = true;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse functional anomaly detection for longitudinal text embeddings"};
  app.require_subcommand(1);
  Overrides o;
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"embed", "score records into embedding vectors"},
      {"fit", "fit per-dimension and multivariate FPCA"},
      {"cluster", "trimmed k-means segmentation and per-cluster refits"},
      {"detect", "split-sample component anomaly detection"},
      {"windows", "window-level localisation of flagged subjects"},
      {"plot-data", "mode-of-variation plot bundles"},
      {"profile", "intent profiling of anomalous records"},
      {"export-features", "cluster labels, covariates and scores"},
      {"simulate", "resampling study of detection stability"},
      {"run", "full pipeline except the simulation study"}};
  for (const auto& [name, help] : stages) add_common(app.add_subcommand(name, help), o);

  std::string syn_out;
  sfda::SyntheticConfig syn;
  auto* gen = app.add_subcommand("synthesize", "write a synthetic clustered dataset");
  gen->add_option("--output-dir", syn_out, "destination directory")->required();
  gen->add_option("--sizes", syn.cluster_sizes, "subjects per cluster");
  gen->add_option("--seed", syn.seed, "generator seed");
  gen->add_option("--noise-sd", syn.noise_sd, "measurement noise sd");
  std::vector<double> shifts;
  gen->add_option("--shift", shifts, "anomaly shift per cluster, in sd of the leading component");
  bool text_only = false;
  gen->add_flag("--text-only", text_only, "drop vectors so records need embedding");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      syn.anomaly_fraction.assign(syn.cluster_sizes.size(), 0.05);
      syn.anomaly_shift.assign(syn.cluster_sizes.size(), 8.0);
      if (!shifts.empty()) {
        if (shifts.size() != syn.cluster_sizes.size()) throw sfda::ConfigError("--shift needs one value per cluster");
        syn.anomaly_shift = shifts;
      }
      auto data = sfda::make_synthetic(syn);
      if (text_only) {
        for (auto& r : data.records) r.vector.reset();
      }
      std::filesystem::create_directories(syn_out);
      sfda::write_records_jsonl(data.records, syn_out + "/records.jsonl");
      sfda::write_covariates_csv(data.covariates, syn_out + "/covariates.csv");
      std::cout << "wrote " << data.records.size() << " records for " << data.ids.size() << " subjects\n";
      return 0;
    }
    spdlog::set_default_logger(spdlog::stderr_color_mt("sfda"));
    if (o.quiet) spdlog::set_level(spdlog::level::warn);
    const std::string name = app.get_subcommands().front()->get_name();
    const sfda::RunConfig config = resolve(o);
    if (o.threads) sfda::set_worker_count(*o.threads);
    const auto manifest = sfda::run_pipeline(config, sfda::parse_stage(name));
    std::cout << "wrote " << manifest.outputs.size() << " files to " << config.output_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return sfda::exit_code_for(e);
  }
}
