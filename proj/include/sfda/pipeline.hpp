#pragma once

#include "sfda/anomaly.hpp"
#include "sfda/dataset.hpp"
#include "sfda/embed.hpp"
#include "sfda/profile.hpp"
#include "sfda/segment.hpp"
#include "sfda/sim.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sfda {

struct RunConfig {
  // Inputs.
  std::string records;
  std::string records_format = "jsonl";
  std::string covariates;

  // Embedding.
  std::string embed_spec = "plutchik";
  std::string backend = "offline";
  std::string cache_dir;
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o-mini";
  std::string token_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  unsigned max_concurrency = 4;
  double rate_limit = 0.0;

  // FPCA.
  int grid_size = 51;
  double fve_dim = 0.95;
  int k_max = 10;
  double fve_multi = 0.90;

  // Segmentation.
  int K = 0;                      // 0: choose by silhouette over K_range
  std::vector<int> K_range = {2, 3, 4, 5, 6};
  double tau = 0.05;
  int restarts = 10;
  int max_iter = 100;
  int n_boot = 50;
  int min_cluster_size = 3;

  // Detection.
  double alpha1 = 0.10;
  double alpha = 0.05;
  double window_alpha = 0.10;
  int W = 4;
  std::vector<double> window_bounds;
  std::string multiplicity = "bonferroni";
  double b_fve = 0.90;            // FVE used to pick B per cluster

  // Profiling.
  std::string intent_mode = "lexical";
  int top_k = 5;

  // Simulation.
  int sim_S = 50;
  double sim_lambda = 10.0;
  int sim_lo = 5;
  int sim_hi = 15;
  std::string sim_source = "fitted";

  std::uint64_t seed = 20240601;
  std::string output_dir = "out";
  bool svg = false;

  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig from_json(const std::string& text, RunConfig base);
  static RunConfig from_file(const std::filesystem::path& path);
};

enum class Stage { kEmbed, kFit, kCluster, kDetect, kWindows, kPlotData, kProfile, kExportFeatures, kSimulate, kAll };

Stage parse_stage(std::string_view name);
std::string to_string(Stage stage);

struct OutputFile {
  std::string path;     // relative to output_dir
  std::string sha256;
  std::size_t bytes = 0;
};

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> stage_seconds;
  std::vector<OutputFile> outputs;
  std::size_t embed_failures = 0;
  std::size_t backend_calls = 0;

  std::string to_json(const RunConfig& config) const;
};

/// Runs every stage up to and including `last`, writing its CSV outputs and
/// manifest.json under config.output_dir. Files are written with a ".partial"
/// suffix and renamed only when the run completes.
RunManifest run_pipeline(const RunConfig& config, Stage last = Stage::kAll,
                         std::shared_ptr<CompletionClient> client = nullptr);

/// Minimal static SVG line chart of a mode-of-variation bundle, one panel per dimension.
std::string render_bundle_svg(const PlotBundle& bundle, const std::string& title);

/// Exception tagged with the stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::exception& cause, int exit_code)
      : Error("stage '" + stage + "' failed: " + cause.what()), stage(std::move(stage)), exit_code(exit_code) {}
  std::string stage;
  int exit_code;
};

/// Exit code for an exception: 2 config, 3 data, 4 backend, 5 internal.
int exit_code_for(const std::exception& e);

}  // namespace sfda
