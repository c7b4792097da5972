#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sfda/profile.hpp"

#include <algorithm>

using namespace sfda;

namespace {

class ScriptedClient : public CompletionClient {
 public:
  explicit ScriptedClient(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const std::string& prompt) override {
    prompts.push_back(prompt);
    const std::string& r = replies_[std::min(prompts.size() - 1, replies_.size() - 1)];
    if (r == "<throw>") throw BackendError("scripted failure");
    return r;
  }
  std::string model_id() const override { return "scripted"; }
  std::vector<std::string> prompts;

 private:
  std::vector<std::string> replies_;
};

}  // namespace

TEST_CASE("normalisation") {
  CHECK(normalize_phrase("  Poor   QUALITY!! ") == "poor quality");
  CHECK(normalize_phrase("leaks, fuel; everywhere.") == "leaks fuel everywhere");
  CHECK(normalize_phrase("...") == "");
  for (const char* s : {"Hello,  World", "a--b", "  MiXeD\tcase\n", "x"}) {
    const std::string once = normalize_phrase(s);
    CHECK(normalize_phrase(once) == once);
  }
  CHECK(std::find(stopwords().begin(), stopwords().end(), "the") != stopwords().end());
  CHECK(parse_intent_mode("llm") == IntentMode::kLlm);
  CHECK_THROWS_AS(parse_intent_mode("semantic"), ConfigError);
}

TEST_CASE("lexical matching and cold start") {
  IntentState state;
  state.record("u1", "poor quality", 1.0);
  const MatchResult hit = match_lexical(state, "u1", "Such poor quality plastic", 5);
  CHECK(hit.phrase == "poor quality");
  CHECK(!hit.created);

  IntentState empty;
  const MatchResult cold = match_or_create(empty, "u2", 0.5, "leaks fuel everywhere", IntentMode::kLexical, 5);
  CHECK(cold.created);
  CHECK(cold.phrase == "leaks fuel everywhere");
  const MatchResult again = match_or_create(empty, "u2", 0.7, "leaks fuel everywhere", IntentMode::kLexical, 5);
  CHECK(!again.created);
  REQUIRE(empty.intents("u2").size() == 1);
  CHECK(empty.intents("u2")[0].count == 2);
  CHECK(empty.intents("u2")[0].first_seen == 0.5);
}

TEST_CASE("global context excludes the subject and ranks by count") {
  IntentState s;
  s.record("a", "slow delivery", 1.0);
  s.record("b", "broken handle", 2.0);
  s.record("b", "broken handle", 3.0);
  s.record("c", "slow delivery", 0.5);
  s.record("c", "slow delivery", 4.0);
  s.record("c", "wrong colour", 5.0);
  const auto top = s.global_topk("a", 5);
  REQUIRE(top.size() == 3);
  CHECK(top[0] == "slow delivery");
  CHECK(top[1] == "broken handle");
  CHECK(top[2] == "wrong colour");
  CHECK(s.global_topk("c", 1) == std::vector<std::string>{"broken handle"});
  // Another subject's intent is reused through the global list.
  const MatchResult m = match_lexical(s, "d", "the broken handle fell off", 5);
  CHECK(m.phrase == "broken handle");
  CHECK(!m.created);
}

TEST_CASE("LLM path: prompt content, re-prompt, truncation, fallback") {
  IntentState state;
  state.record("u", "poor value", 1.0);
  state.record("v", "late shipping", 1.0);
  ScriptedClient ok({"Poor value"});
  const MatchResult m = match_or_create(state, "u", 2.0, "not worth the money", IntentMode::kLlm, 5, &ok);
  CHECK(m.phrase == "poor value");
  CHECK(!m.created);
  REQUIRE(ok.prompts.size() == 1);
  CHECK(ok.prompts[0].find("- poor value") != std::string::npos);
  CHECK(ok.prompts[0].find("- late shipping") != std::string::npos);
  CHECK(ok.prompts[0].find("not worth the money") != std::string::npos);

  ScriptedClient wordy({"one two three four five six", "still far too many words in this reply"});
  const MatchResult t = match_or_create(state, "u", 3.0, "strange reply", IntentMode::kLlm, 5, &wordy);
  CHECK(wordy.prompts.size() == 2);
  CHECK(t.phrase == "still far too many words");
  CHECK(t.created);

  ScriptedClient broken({"<throw>"});
  const MatchResult f = match_or_create(state, "w", 1.0, "late shipping again", IntentMode::kLlm, 5, &broken);
  CHECK(f.phrase == "late shipping");

  ResponseCache cache;
  ScriptedClient once({"cheap material"});
  IntentState s1, s2;
  match_or_create(s1, "x", 1.0, "flimsy", IntentMode::kLlm, 5, &once, &cache);
  match_or_create(s2, "x", 1.0, "flimsy", IntentMode::kLlm, 5, &once, &cache);
  CHECK(once.prompts.size() == 1);
  CHECK(s2.intents("x")[0].phrase == "cheap material");
  CHECK_THROWS_AS(match_or_create(s1, "x", 2.0, "text", IntentMode::kLlm, 5, nullptr), ConfigError);
  CHECK_THROWS_AS(match_or_create(s1, "x", 2.0, " !! ", IntentMode::kLexical, 5), DataError);
}

TEST_CASE("summary counts per cluster and window") {
  std::vector<ProfiledRecord> recs{
      {1, 2, "b", 3.0, "handle snapped"},
      {1, 0, "a", 1.0, "poor quality plastic"},
      {1, 2, "a", 2.5, "the poor quality plastic cracked"},
      {1, 1, "c", 1.7, "arrived late"},
  };
  IntentState state;
  const auto rows = profile_anomalies(recs, state, IntentMode::kLexical, 5);
  int total = 0;
  for (const auto& r : rows) total += r.count;
  CHECK(total == 4);
  auto find = [&](int w, const std::string& intent) {
    for (const auto& r : rows)
      if (r.window == w && r.intent == intent) return r.count;
    return 0;
  };
  CHECK(find(0, "poor quality plastic") == 1);
  CHECK(find(2, "poor quality plastic") == 1);
  CHECK(find(1, "arrived late") == 1);
  CHECK(find(2, "handle snapped") == 1);
  IntentState again;
  const auto rows2 = profile_anomalies(recs, again, IntentMode::kLexical, 5);
  REQUIRE(rows2.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows2[i].intent == rows[i].intent);
  CHECK(again.to_json() == state.to_json());
  CHECK(state.to_json().find("\"first_seen\"") != std::string::npos);
}

TEST_CASE("anomalous records follow flagged windows") {
  std::vector<RawRecord> records;
  auto add = [&](const std::string& id, double t, const std::string& text) {
    RawRecord r;
    r.subject_id = id;
    r.timestamp = t;
    r.text = text;
    r.vector = std::vector<double>{0.0};
    records.push_back(r);
  };
  add("a", 0.2, "early complaint");
  add("a", 0.8, "late complaint");
  add("b", 0.3, "only components");
  add("b", 0.9, "still components");
  add("c", 0.5, "never flagged");
  const Dataset data = build_dataset(records);
  AnomalyReport report;
  report.A1 = {{0, {0}}, {1, {0}}};
  WindowReport wr;
  wr.windows = WindowSet::equal_width(0.0, 1.0, 2);
  wr.A2 = {{0, {1}}};
  const auto out = anomalous_records(3, data, report, wr);
  REQUIRE(out.size() == 3);
  CHECK(out[0].text == "late complaint");
  CHECK(out[0].window == 1);
  CHECK(out[1].subject_id == "b");
  CHECK(out[2].subject_id == "b");
  for (const auto& r : out) CHECK(r.cluster == 3);
}
