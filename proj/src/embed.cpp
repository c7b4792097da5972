#include "sfda/embed.hpp"

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

namespace sfda {

namespace {

using nlohmann::json;

struct Petal {
  std::string name;
  std::string meaning;
  std::string mild, moderate, intense;
};

std::string petal_prompt(const Petal& pos, const Petal& neg) {
  std::ostringstream out;
  out << "You are an expert at scoring the emotion expressed in text, honestly and consistently.\n"
      << "You will read a user's product review made of a review_title and a review_text, and "
         "measure one emotion axis on a continuous scale from -1 to 1.\n\n"
      << "The axis is one pair of opposing petals of Plutchik's wheel of emotions.\n"
      << "Positive side (" << pos.name << "): " << pos.meaning << "\n"
      << "  - " << pos.mild << " (mild): score in (0, 1/3]\n"
      << "  - " << pos.moderate << " (moderate): score in (1/3, 2/3]\n"
      << "  - " << pos.intense << " (intense): score in (2/3, 1]\n"
      << "Negative side (" << neg.name << "): " << neg.meaning << "\n"
      << "  - " << neg.mild << " (mild): score in [-1/3, 0)\n"
      << "  - " << neg.moderate << " (moderate): score in [-2/3, -1/3)\n"
      << "  - " << neg.intense << " (intense): score in [-1, -2/3)\n"
      << "If neither side is present the score is 0.\n\n"
      << "--- TASK ---\n"
      << "Read both the review_title and the review_text, decide which side and intensity best "
         "describe the review, and reply with a single number between -1 and 1 without any "
         "explanation, in the format: 'Score= '\n\n"
      << "review_title: {title}\n"
      << "review_text: {body}\n";
  return out.str();
}

std::string comment_prompt(const std::string& axis, const std::string& high, const std::string& low) {
  std::ostringstream out;
  out << "You are an expert content moderator scoring online discussion comments.\n"
      << "Score the " << axis << " of the comment below on a continuous scale from -1 to 1, where "
      << "1 means " << high << ", -1 means " << low << ", and 0 means neutral.\n"
      << "Reply with a single number between -1 and 1 without any explanation, in the format: "
         "'Score= '\n\n"
      << "comment_title: {title}\n"
      << "comment_text: {body}\n";
  return out.str();
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

void PromptSpec::validate() const {
  if (axis_prompts.empty()) throw ConfigError("prompt spec '" + name + "' has no axes");
  if (score_range.size() != axis_prompts.size() || axis_names.size() != axis_prompts.size()) {
    throw ConfigError("prompt spec '" + name + "': axis names/prompts/ranges differ in length");
  }
  for (const auto& r : score_range) {
    if (!(r.lo < r.hi)) throw ConfigError("prompt spec '" + name + "': score range needs lo < hi");
  }
  if (trim(output_marker).empty()) throw ConfigError("prompt spec '" + name + "': empty marker");
}

PromptSpec PromptSpec::plutchik() {
  const Petal joy{"joy", "happiness or pleasure derived from product satisfaction", "serenity", "joy",
                  "ecstasy"};
  const Petal sadness{"sadness", "disappointment or sorrow due to unmet product expectations",
                      "pensiveness", "sadness", "grief"};
  const Petal trust{"trust", "reliability or confidence in the product", "acceptance", "trust",
                    "admiration"};
  const Petal disgust{"disgust", "revulsion or strong disapproval of the product", "boredom",
                      "disgust", "loathing"};
  const Petal fear{"fear", "worry or concern about the product or its effects", "apprehension",
                   "fear", "terror"};
  const Petal anger{"anger", "frustration or anger towards the product or service", "annoyance",
                    "anger", "rage"};
  const Petal surprise{"surprise", "astonishment or unexpected reactions towards the product",
                       "distraction", "surprise", "amazement"};
  const Petal anticipation{"anticipation", "hopeful expectation or eagerness about the product",
                           "interest", "anticipation", "vigilance"};
  PromptSpec spec;
  spec.name = "plutchik";
  spec.axis_names = {"joy_sadness", "trust_disgust", "fear_anger", "surprise_anticipation"};
  spec.axis_prompts = {petal_prompt(joy, sadness), petal_prompt(trust, disgust),
                       petal_prompt(fear, anger), petal_prompt(surprise, anticipation)};
  spec.score_range.assign(4, ScoreRange{-1.0, 1.0});
  return spec;
}

PromptSpec PromptSpec::toxicity() {
  PromptSpec spec;
  spec.name = "toxicity";
  spec.axis_names = {"toxicity", "aggression"};
  spec.axis_prompts = {
      comment_prompt("toxicity", "extremely rude, hateful or disrespectful", "clearly civil and kind"),
      comment_prompt("aggression", "openly hostile or attacking another person",
                     "calm and conciliatory")};
  spec.score_range.assign(2, ScoreRange{-1.0, 1.0});
  return spec;
}

PromptSpec PromptSpec::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open prompt spec " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("invalid prompt spec " + path.string() + ": " + e.what());
  }
  PromptSpec spec;
  spec.name = doc.value("name", path.stem().string());
  spec.output_marker = doc.value("output_marker", std::string("Score="));
  for (const auto& axis : doc.at("axes")) {
    spec.axis_names.push_back(axis.value("name", "axis" + std::to_string(spec.axis_names.size() + 1)));
    spec.axis_prompts.push_back(axis.at("prompt").get<std::string>());
    spec.score_range.push_back({axis.value("lo", -1.0), axis.value("hi", 1.0)});
  }
  spec.validate();
  return spec;
}

PromptSpec PromptSpec::by_name(const std::string& name) {
  if (name == "plutchik") return plutchik();
  if (name == "toxicity") return toxicity();
  if (name.rfind("custom:", 0) == 0) return from_file(name.substr(7));
  throw ConfigError("unknown embed spec '" + name + "'");
}

std::string render_prompt(const PromptSpec& spec, std::size_t axis, std::string_view title,
                          std::string_view body) {
  if (axis >= spec.p()) {
    throw ConfigError("axis " + std::to_string(axis) + " out of range for spec '" + spec.name +
                      "' with p=" + std::to_string(spec.p()));
  }
  // Substitute body last so that a literal "{body}" inside a title stays put.
  std::string out = spec.axis_prompts[axis];
  const std::string body_token = "\x01body\x01";
  replace_all(out, "{body}", body_token);
  replace_all(out, "{title}", title);
  replace_all(out, body_token, body);
  return out;
}

ParsedScore parse_score(std::string_view reply, std::string_view marker, ScoreRange range) {
  std::string head = trim(marker);
  bool needs_equals = false;
  if (!head.empty() && head.back() == '=') {
    head.pop_back();
    head = trim(head);
    needs_equals = true;
  }
  const std::string text = lower(reply);
  const std::string key = lower(head);

  std::optional<std::size_t> value_start;
  for (std::size_t pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + 1)) {
    std::size_t cur = pos + key.size();
    if (needs_equals) {
      while (cur < text.size() && std::isspace(static_cast<unsigned char>(text[cur]))) ++cur;
      if (cur >= text.size() || text[cur] != '=') continue;
      ++cur;
    }
    value_start = cur;
  }
  if (!value_start) throw ScoreParseError("score marker '" + std::string(marker) + "' not found");

  static const std::regex kNumber(R"([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)");
  const std::string tail(reply.substr(*value_start));
  std::smatch m;
  if (!std::regex_search(tail, m, kNumber)) {
    throw ScoreParseError("no number after score marker");
  }
  const double raw = parse_double(m.str());
  if (!std::isfinite(raw)) throw ScoreParseError("non-finite score");
  ParsedScore out;
  out.value = std::clamp(raw, range.lo, range.hi);
  out.clamped = out.value != raw;
  return out;
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error("cannot create cache dir " + dir_.string() + ": " + ec.message());
  }
}

std::string ResponseCache::make_key(std::string_view model_id, std::string_view prompt,
                                    std::string_view input) {
  std::string material;
  material.reserve(model_id.size() + prompt.size() + input.size() + 2);
  material.append(model_id).push_back('\x1f');
  material.append(prompt).push_back('\x1f');
  material.append(input);
  return sha256_hex(material);
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
  {
    std::shared_lock lock(mutex_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  }
  if (dir_.empty()) return std::nullopt;
  std::ifstream in(dir_ / key, std::ios::binary);
  if (!in) return std::nullopt;
  std::string payload;
  if (!std::getline(in, payload)) return std::nullopt;
  std::unique_lock lock(mutex_);
  memo_.emplace(key, payload);
  return payload;
}

void ResponseCache::put(const std::string& key, const std::string& payload,
                        const std::string& metadata_json) {
  if (payload.find('\n') != std::string::npos) throw Error("cache payload must be one line");
  std::unique_lock lock(mutex_);
  if (!dir_.empty()) {
    const auto final_path = dir_ / key;
    const auto tmp = dir_ / (key + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << payload << '\n' << metadata_json << '\n';
      if (!out) throw Error("cache write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, final_path, ec);
    if (ec) throw Error("cache write failed for " + final_path.string() + ": " + ec.message());
  }
  memo_[key] = payload;
  ++writes_;
}

HttpCompletionClient::HttpCompletionClient(HttpBackendConfig config) : config_(std::move(config)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.base_url, m, kUrl)) {
    throw ConfigError("backend base URL must look like http(s)://host[:port][/path]: " +
                      config_.base_url);
  }
  scheme_host_port_ = m[1].str();
  path_prefix_ = m[2].matched ? m[2].str() : "";
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::string HttpCompletionClient::complete(const std::string& prompt) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!config_.token_env.empty()) {
    if (const char* token = std::getenv(config_.token_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  json body = {{"model", config_.model},
               {"temperature", config_.temperature},
               {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  auto res = client.Post(path_prefix_ + "/chat/completions", headers, body.dump(), "application/json");
  if (!res) throw BackendError("transport failure: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw BackendError("backend returned HTTP " + std::to_string(res->status));
  }
  try {
    const auto reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed completion response: ") + e.what());
  }
}

RateLimiter::RateLimiter(double per_second)
    : per_second_(per_second), next_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  if (per_second_ <= 0.0) return;
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                       std::chrono::duration<double>(1.0 / per_second_));
  }
  std::this_thread::sleep_until(slot);
}

BackendKind parse_backend_kind(std::string_view name) {
  if (name == "live") return BackendKind::kLive;
  if (name == "offline") return BackendKind::kOffline;
  throw ConfigError("unknown backend '" + std::string(name) + "'");
}

double offline_score(std::size_t axis, std::string_view text) {
  std::string material = "sfda-offline-v1|axis=" + std::to_string(axis) + "|";
  material.append(text);
  const std::uint64_t h = sha256_u64(material);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return 2.0 * u - 1.0;
}

Embedder::Embedder(PromptSpec spec, BackendKind kind, std::shared_ptr<CompletionClient> client,
                   std::shared_ptr<ResponseCache> cache, RetryPolicy retry, double rate_limit)
    : spec_(std::move(spec)),
      kind_(kind),
      client_(std::move(client)),
      cache_(cache ? std::move(cache) : std::make_shared<ResponseCache>()),
      retry_(retry),
      limiter_(rate_limit) {
  spec_.validate();
  if (kind_ == BackendKind::kLive && !client_) throw ConfigError("live backend needs a client");
  if (retry_.attempts < 1) throw ConfigError("retry attempts must be >= 1");
}

std::string Embedder::model_id() const {
  return kind_ == BackendKind::kOffline ? std::string("offline-synthetic-v1") : client_->model_id();
}

double Embedder::score_axis(std::size_t axis, const std::string& prompt, std::string_view text) {
  const std::string key = ResponseCache::make_key(model_id(), prompt, text);
  if (auto hit = cache_->get(key)) return parse_double(*hit);

  const ScoreRange range = spec_.score_range[axis];
  double value = 0.0;
  if (kind_ == BackendKind::kOffline) {
    ++backend_calls_;
    value = std::clamp(offline_score(axis, text), range.lo, range.hi);
  } else {
    std::string last_error;
    bool ok = false;
    for (int attempt = 0; attempt < retry_.attempts && !ok; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(retry_.base_backoff * (1 << (attempt - 1)));
      try {
        limiter_.acquire();
        ++backend_calls_;
        const std::string reply = client_->complete(prompt);
        const ParsedScore parsed = parse_score(reply, spec_.output_marker, range);
        if (parsed.clamped) {
          ++clamped_;
          spdlog::warn("embed: axis {} reply clamped into [{}, {}]: {}", spec_.axis_names[axis],
                       range.lo, range.hi, reply);
        }
        value = parsed.value;
        ok = true;
      } catch (const BackendError& e) {
        last_error = e.what();
        spdlog::debug("embed: attempt {} failed: {}", attempt + 1, last_error);
      }
    }
    if (!ok) throw BackendError("retries exhausted: " + last_error);
  }
  json meta = {{"model", model_id()}, {"spec", spec_.name}, {"axis", spec_.axis_names[axis]},
               {"created_at", static_cast<std::int64_t>(std::chrono::duration_cast<std::chrono::seconds>(
                                  std::chrono::system_clock::now().time_since_epoch())
                                  .count())}};
  cache_->put(key, format_double(value), meta.dump());
  return value;
}

std::vector<double> Embedder::embed_text(std::string_view title, std::string_view body) {
  std::vector<double> out(spec_.p());
  std::string input(title);
  input.push_back('\x1e');
  input.append(body);
  for (std::size_t axis = 0; axis < spec_.p(); ++axis) {
    out[axis] = score_axis(axis, render_prompt(spec_, axis, title, body), input);
  }
  return out;
}

std::vector<double> Embedder::embed_record(const RawRecord& record) {
  if (!record.text) {
    throw EmbedError("record has no text", record.subject_id, record.timestamp);
  }
  std::string title;
  if (auto it = record.metadata.find("title"); it != record.metadata.end()) title = it->second;
  try {
    return embed_text(title, *record.text);
  } catch (const EmbedError&) {
    throw;
  } catch (const BackendError& e) {
    throw EmbedError(std::string("embedding failed for subject '") + record.subject_id +
                         "' at t=" + format_double(record.timestamp) + ": " + e.what(),
                     record.subject_id, record.timestamp);
  }
}

EmbedBatchResult Embedder::embed_records(const std::vector<RawRecord>& records,
                                         unsigned max_concurrency) {
  std::vector<std::optional<std::vector<double>>> vectors(records.size());
  std::vector<std::string> errors(records.size());
  parallel_for(records.size(), std::max(1u, max_concurrency), [&](std::size_t i) {
    if (records[i].vector) return;
    try {
      vectors[i] = embed_record(records[i]);
    } catch (const EmbedError& e) {
      errors[i] = e.what();
    }
  });
  EmbedBatchResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].vector) {
      out.records.push_back(records[i]);
    } else if (vectors[i]) {
      RawRecord r = records[i];
      r.vector = *vectors[i];
      out.records.push_back(std::move(r));
    } else {
      spdlog::error("embed: dropping record at line {}: {}", records[i].line, errors[i]);
      out.failures.emplace_back(records[i], errors[i]);
    }
  }
  return out;
}

}  // namespace sfda
