#include "sfda/profile.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

namespace sfda {

namespace {

std::vector<std::string> tokens(const std::string& normalized) {
  std::vector<std::string> out;
  std::istringstream in(normalized);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

bool contains_words(const std::string& haystack, const std::string& needle) {
  if (needle.empty()) return false;
  return (" " + haystack + " ").find(" " + needle + " ") != std::string::npos;
}

std::string join(const std::vector<std::string>& words, std::size_t limit) {
  std::string out;
  for (std::size_t i = 0; i < words.size() && i < limit; ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::string derive_phrase(const std::string& normalized) {
  const auto words = tokens(normalized);
  const auto& stop = stopwords();
  const std::set<std::string> stopset(stop.begin(), stop.end());
  std::unordered_map<std::string, std::pair<int, std::size_t>> freq;  // count, first position
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (stopset.count(words[i])) continue;
    auto [it, fresh] = freq.try_emplace(words[i], 0, i);
    it->second.first += 1;
  }
  if (freq.empty()) return words.empty() ? std::string("unspecified") : join(words, 3);
  std::vector<std::tuple<int, std::size_t, std::string>> ranked;
  for (const auto& [w, v] : freq) ranked.emplace_back(-v.first, v.second, w);
  std::sort(ranked.begin(), ranked.end());
  if (ranked.size() > 3) ranked.resize(3);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return std::get<1>(a) < std::get<1>(b); });
  std::vector<std::string> chosen;
  for (const auto& r : ranked) chosen.push_back(std::get<2>(r));
  return join(chosen, 3);
}

}  // namespace

std::string normalize_phrase(std::string_view text) {
  std::string out;
  bool space = false;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80 || c == '\'') {
      if (space && !out.empty()) out.push_back(' ');
      space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      space = true;
    }
  }
  return out;
}

const std::vector<std::string>& stopwords() {
  static const std::vector<std::string> words = {
      "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as",
      "at", "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can",
      "could", "did", "do", "does", "doing", "down", "during", "each", "even", "few", "for", "from",
      "further", "get", "got", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
      "him", "himself", "his", "how", "i", "i'm", "if", "in", "into", "is", "it", "it's", "its", "itself",
      "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
      "one", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "really", "same",
      "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
      "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too", "under",
      "until", "up", "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom",
      "why", "will", "with", "would", "you", "your", "yours", "yourself", "yourselves"};
  return words;
}

IntentMode parse_intent_mode(std::string_view name) {
  if (name == "lexical") return IntentMode::kLexical;
  if (name == "llm") return IntentMode::kLlm;
  throw ConfigError("unknown intent mode '" + std::string(name) + "'");
}

const std::vector<IntentEntry>& IntentState::intents(const std::string& subject) const {
  static const std::vector<IntentEntry> empty;
  const auto it = per_subject_.find(subject);
  return it == per_subject_.end() ? empty : it->second;
}

std::vector<std::string> IntentState::global_topk(const std::string& exclude, std::size_t k) const {
  struct Agg {
    int count = 0;
    double first_seen = 0.0;
    std::size_t order = 0;
  };
  std::map<std::string, Agg> agg;
  for (const auto& [subject, list] : per_subject_) {
    if (subject == exclude) continue;
    for (const auto& e : list) {
      auto [it, fresh] = agg.try_emplace(e.phrase, Agg{0, e.first_seen, e.order});
      it->second.count += e.count;
      if (e.first_seen < it->second.first_seen) it->second.first_seen = e.first_seen;
    }
  }
  std::vector<std::pair<std::string, Agg>> ranked(agg.begin(), agg.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    if (a.second.first_seen != b.second.first_seen) return a.second.first_seen < b.second.first_seen;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) out.push_back(ranked[i].first);
  return out;
}

void IntentState::record(const std::string& subject, const std::string& phrase, double time) {
  auto& list = per_subject_[subject];
  for (auto& e : list) {
    if (e.phrase == phrase) {
      e.count += 1;
      return;
    }
  }
  list.push_back({phrase, 1, time, created_++});
}

std::vector<std::string> IntentState::subjects() const {
  std::vector<std::string> out;
  for (const auto& [s, list] : per_subject_) out.push_back(s);
  return out;
}

std::string IntentState::to_json() const {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& [subject, list] : per_subject_) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : list) {
      arr.push_back({{"phrase", e.phrase}, {"count", e.count}, {"first_seen", e.first_seen}});
    }
    doc[subject] = std::move(arr);
  }
  return doc.dump(2);
}

MatchResult match_lexical(const IntentState& state, const std::string& subject, const std::string& text,
                          std::size_t k) {
  const std::string norm = normalize_phrase(text);
  auto try_list = [&](const std::vector<std::string>& phrases) -> std::optional<std::string> {
    for (const auto& p : phrases) {
      if (contains_words(norm, p) || contains_words(p, norm)) return p;
    }
    return std::nullopt;
  };
  std::vector<std::string> own;
  for (const auto& e : state.intents(subject)) own.push_back(e.phrase);
  if (auto hit = try_list(own)) return {*hit, false};
  if (auto hit = try_list(state.global_topk(subject, k))) return {*hit, false};
  const std::string phrase = derive_phrase(norm);
  const bool exists = std::find(own.begin(), own.end(), phrase) != own.end();
  return {phrase, !exists};
}

std::string intent_prompt(const std::vector<std::string>& own, const std::vector<std::string>& global,
                          const std::string& text) {
  auto list = [](const std::vector<std::string>& v) {
    if (v.empty()) return std::string("(none)");
    std::string out;
    for (const auto& s : v) out += "- " + s + "\n";
    return out;
  };
  std::ostringstream out;
  out << "You label the underlying intent or complaint of a customer review with a short keyword phrase.\n"
      << "Intents this customer expressed before:\n" << list(own)
      << "\nMost frequent intents of other customers:\n" << list(global)
      << "\nIf the review below matches one of the listed intents, reply with that phrase exactly. "
         "Otherwise reply with a new phrase of at most 5 words. Reply with the phrase only.\n\n"
      << "review: " << text << "\n";
  return out.str();
}

MatchResult match_or_create(IntentState& state, const std::string& subject, double time,
                            const std::string& text, IntentMode mode, std::size_t k,
                            CompletionClient* client, ResponseCache* cache) {
  if (normalize_phrase(text).empty()) throw DataError("cannot profile an empty text");
  MatchResult result;
  bool done = false;
  if (mode == IntentMode::kLlm) {
    if (!client) throw ConfigError("llm intent mode needs a completion client");
    std::vector<std::string> own;
    for (const auto& e : state.intents(subject)) own.push_back(e.phrase);
    const auto global = state.global_topk(subject, k);
    auto ask = [&](const std::string& prompt) {
      const std::string key = ResponseCache::make_key(client->model_id(), prompt, "");
      if (cache) {
        if (auto hit = cache->get(key)) return *hit;
      }
      std::string reply = normalize_phrase(client->complete(prompt));
      if (cache && !reply.empty()) cache->put(key, reply, R"({"kind":"intent"})");
      return reply;
    };
    try {
      std::string prompt = intent_prompt(own, global, text);
      std::string reply = ask(prompt);
      if (tokens(reply).size() > 5) {
        reply = ask(prompt + "\nYour previous answer was too long. Use at most 5 words.\n");
        reply = join(tokens(reply), 5);
      }
      if (reply.empty()) throw BackendError("empty intent reply");
      const bool known = std::find(own.begin(), own.end(), reply) != own.end();
      result = {reply, !known};
      done = true;
    } catch (const BackendError& e) {
      spdlog::warn("intent: backend failed for subject '{}' at t={}, using lexical matcher: {}", subject,
                   time, e.what());
    }
  }
  if (!done) result = match_lexical(state, subject, text, k);
  state.record(subject, result.phrase, time);
  return result;
}

std::vector<ProfiledRecord> anomalous_records(int cluster, const Dataset& cluster_data,
                                              const AnomalyReport& report, const WindowReport& windows) {
  std::vector<ProfiledRecord> out;
  for (const auto& f : report.A1) {
    const auto& subject = cluster_data.subjects[f.subject];
    const Flagged* w = windows.find(f.subject);
    for (const auto& obs : subject.records) {
      if (!obs.text || normalize_phrase(*obs.text).empty()) continue;
      const int win = windows.windows.locate(obs.t);
      if (w && std::find(w->components.begin(), w->components.end(), win) == w->components.end()) continue;
      out.push_back({cluster, win, subject.subject_id, obs.t, *obs.text});
    }
  }
  return out;
}

std::vector<IntentSummaryRow> profile_anomalies(std::vector<ProfiledRecord> records, IntentState& state,
                                                IntentMode mode, std::size_t k, CompletionClient* client,
                                                ResponseCache* cache) {
  std::stable_sort(records.begin(), records.end(), [](const ProfiledRecord& a, const ProfiledRecord& b) {
    return std::tie(a.subject_id, a.t) < std::tie(b.subject_id, b.t);
  });
  std::map<std::tuple<int, int, std::string>, int> counts;
  for (const auto& r : records) {
    const MatchResult m = match_or_create(state, r.subject_id, r.t, r.text, mode, k, client, cache);
    counts[{r.cluster, r.window, m.phrase}] += 1;
  }
  std::vector<IntentSummaryRow> out;
  for (const auto& [key, c] : counts) out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), c});
  return out;
}

}  // namespace sfda
