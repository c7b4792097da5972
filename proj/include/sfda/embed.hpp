#pragma once

#include "sfda/common.hpp"
#include "sfda/dataset.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sfda {

/// Reply did not contain a usable score; callers retry.
class ScoreParseError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// A text could not be embedded after all retries.
class EmbedError : public BackendError {
 public:
  EmbedError(const std::string& what, std::string subject_id, double timestamp)
      : BackendError(what), subject_id(std::move(subject_id)), timestamp(timestamp) {}
  std::string subject_id;
  double timestamp;
};

struct ScoreRange {
  double lo = -1.0;
  double hi = 1.0;
};

/// Prompt family mapping a text to p scalar scores, one completion per axis.
/// Templates use the placeholders {title} and {body}.
struct PromptSpec {
  std::string name;
  std::vector<std::string> axis_names;
  std::vector<std::string> axis_prompts;
  std::vector<ScoreRange> score_range;
  std::string output_marker = "Score=";

  std::size_t p() const { return axis_prompts.size(); }
  void validate() const;

  /// Four opposing-petal emotion axes (joy-sadness, trust-disgust,
  /// fear-anger, surprise-anticipation) on [-1, 1].
  static PromptSpec plutchik();
  /// Toxicity and aggression on [-1, 1] for conversational comments.
  static PromptSpec toxicity();
  /// JSON file: {name, output_marker, axes: [{name, prompt, lo, hi}]}.
  static PromptSpec from_file(const std::filesystem::path& path);
  /// "plutchik", "toxicity" or "custom:<path>".
  static PromptSpec by_name(const std::string& name);
};

std::string render_prompt(const PromptSpec& spec, std::size_t axis, std::string_view title,
                          std::string_view body);

struct ParsedScore {
  double value = 0.0;
  bool clamped = false;
};

/// Finds the last case-insensitive occurrence of the marker (whitespace
/// around '=' tolerated), reads the first decimal after it and clamps it
/// into range. Throws ScoreParseError when either is missing.
ParsedScore parse_score(std::string_view reply, std::string_view marker, ScoreRange range);

/// Convenience overload returning only the clamped value.
inline double parse_score_value(std::string_view reply, std::string_view marker, ScoreRange range) {
  return parse_score(reply, marker, range).value;
}

/// On-disk key/value store, one file per entry named by the hex SHA-256 key.
/// File content: payload line, then a metadata JSON line.
class ResponseCache {
 public:
  /// Empty directory = in-memory only.
  explicit ResponseCache(std::filesystem::path dir = {});

  static std::string make_key(std::string_view model_id, std::string_view prompt,
                              std::string_view input);

  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& payload, const std::string& metadata_json);

  std::size_t writes() const { return writes_.load(); }

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  mutable std::unordered_map<std::string, std::string> memo_;
  std::atomic<std::size_t> writes_{0};
};

/// Chat-completion style text generator.
class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string model_id() const = 0;
};

struct HttpBackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o-mini";
  std::string token_env = "OPENAI_API_KEY";
  double temperature = 0.0;
  int timeout_seconds = 60;
};

/// POSTs {model, temperature, messages:[{role:user, content}]} to
/// <base_url>/chat/completions and returns choices[0].message.content.
class HttpCompletionClient : public CompletionClient {
 public:
  explicit HttpCompletionClient(HttpBackendConfig config);
  std::string complete(const std::string& prompt) override;
  std::string model_id() const override { return config_.model; }

 private:
  HttpBackendConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

/// Token bucket limiting calls per second across threads (<= 0 disables).
class RateLimiter {
 public:
  explicit RateLimiter(double per_second);
  void acquire();

 private:
  double per_second_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_;
};

enum class BackendKind { kLive, kOffline };

BackendKind parse_backend_kind(std::string_view name);

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_backoff{250};
};

/// Deterministic synthetic score in (-1, 1): 2u - 1 where u is the unit
/// interval image of a keyed 64-bit hash of (axis, text).
double offline_score(std::size_t axis, std::string_view text);

struct EmbedBatchResult {
  std::vector<RawRecord> records;  // successfully embedded, input order
  std::vector<std::pair<RawRecord, std::string>> failures;
};

class Embedder {
 public:
  Embedder(PromptSpec spec, BackendKind kind, std::shared_ptr<CompletionClient> client,
           std::shared_ptr<ResponseCache> cache, RetryPolicy retry = {}, double rate_limit = 0.0);

  /// Scores one (title, body) pair on every axis; cached per axis.
  std::vector<double> embed_text(std::string_view title, std::string_view body);
  /// Requires record.text. Title comes from metadata["title"] when present.
  std::vector<double> embed_record(const RawRecord& record);
  /// Embeds all records lacking a vector with up to `max_concurrency`
  /// workers; records that exhaust retries are reported, not thrown.
  EmbedBatchResult embed_records(const std::vector<RawRecord>& records, unsigned max_concurrency);

  std::size_t backend_calls() const { return backend_calls_.load(); }
  std::size_t clamped_count() const { return clamped_.load(); }
  const PromptSpec& spec() const { return spec_; }
  std::string model_id() const;

 private:
  double score_axis(std::size_t axis, const std::string& prompt, std::string_view text);

  PromptSpec spec_;
  BackendKind kind_;
  std::shared_ptr<CompletionClient> client_;
  std::shared_ptr<ResponseCache> cache_;
  RetryPolicy retry_;
  RateLimiter limiter_;
  std::atomic<std::size_t> backend_calls_{0};
  std::atomic<std::size_t> clamped_{0};
};

}  // namespace sfda
