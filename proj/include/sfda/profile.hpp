#pragma once

#include "sfda/anomaly.hpp"
#include "sfda/dataset.hpp"
#include "sfda/embed.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace sfda {

/// Lower-case, punctuation to spaces, single spaces, trimmed. Idempotent.
std::string normalize_phrase(std::string_view text);

/// Built-in English stopword list used by the lexical matcher.
const std::vector<std::string>& stopwords();

struct IntentEntry {
  std::string phrase;
  int count = 0;
  double first_seen = 0.0;
  std::size_t order = 0;   // global creation order, breaks first_seen ties
};

enum class IntentMode { kLexical, kLlm };

IntentMode parse_intent_mode(std::string_view name);

class IntentState {
 public:
  const std::vector<IntentEntry>& intents(const std::string& subject) const;
  /// k most frequent intents of every subject except `exclude`, ranked by
  /// count, then first_seen, then phrase.
  std::vector<std::string> global_topk(const std::string& exclude, std::size_t k) const;
  void record(const std::string& subject, const std::string& phrase, double time);
  std::vector<std::string> subjects() const;
  /// {"subject": [{"phrase", "count", "first_seen"}]}.
  std::string to_json() const;

 private:
  std::map<std::string, std::vector<IntentEntry>> per_subject_;
  std::size_t created_ = 0;
};

struct MatchResult {
  std::string phrase;
  bool created = false;
};

/// Offline matcher: substring match against the subject's own intents, then
/// the global top-k, else a phrase of the 3 most frequent non-stopwords.
MatchResult match_lexical(const IntentState& state, const std::string& subject, const std::string& text,
                          std::size_t k);

/// Builds the intent-extraction prompt for the completion backend.
std::string intent_prompt(const std::vector<std::string>& own, const std::vector<std::string>& global,
                          const std::string& text);

/// Matches or creates an intent and records it in the state. LLM replies
/// longer than 5 words are re-prompted once, then truncated; backend
/// failures fall back to the lexical matcher.
MatchResult match_or_create(IntentState& state, const std::string& subject, double time,
                            const std::string& text, IntentMode mode, std::size_t k,
                            CompletionClient* client = nullptr, ResponseCache* cache = nullptr);

/// One record selected for profiling.
struct ProfiledRecord {
  int cluster = 0;
  int window = -1;          // 0-based, -1 when the record lies outside every window
  std::string subject_id;
  double t = 0.0;
  std::string text;
};

/// Anomalous records of one cluster: records of A1 subjects inside their
/// flagged windows, or every record when no window was flagged.
std::vector<ProfiledRecord> anomalous_records(int cluster, const Dataset& cluster_data,
                                              const AnomalyReport& report, const WindowReport& windows);

struct IntentSummaryRow {
  int cluster = 0;
  int window = 0;
  std::string intent;
  int count = 0;
};

/// Processes records in (subject_id, timestamp) order and counts intents per
/// (cluster, window).
std::vector<IntentSummaryRow> profile_anomalies(std::vector<ProfiledRecord> records, IntentState& state,
                                                IntentMode mode, std::size_t k,
                                                CompletionClient* client = nullptr,
                                                ResponseCache* cache = nullptr);

}  // namespace sfda
