#pragma once

// Chat-completion access behind one interface. Providers:
//   replay  recorded responses looked up by prompt digest (offline, exact)
//   live    OpenAI-compatible /chat/completions over HTTP(S)
//   stub    keyword heuristic, deterministic, for tests and demos
// The gateway adds retries, an audit log and bounded-parallel batches.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "emocause/detail/http.hpp"
#include "emocause/detail/sha256.hpp"
#include "emocause/detail/strings.hpp"
#include "emocause/error.hpp"
#include "emocause/prompting.hpp"
#include "emocause/sleeper.hpp"
#include "emocause/taxonomy.hpp"

namespace emocause {

struct ModelConfig {
  std::string provider_id = "replay";
  std::string model_name = "gpt-4";
  double temperature = 0.0;
  int max_output_tokens = 256;
  std::chrono::milliseconds request_timeout{60'000};
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{1'000};
  std::chrono::milliseconds max_backoff{30'000};
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";

  void validate() const {
    if (model_name.empty()) throw Error(ErrorKind::kConfiguration, "model_name is empty");
    if (!(temperature >= 0.0)) throw Error(ErrorKind::kConfiguration, "temperature must be >= 0");
    if (max_retries < 0) throw Error(ErrorKind::kConfiguration, "max_retries must be >= 0");
    if (max_output_tokens < 1) throw Error(ErrorKind::kConfiguration, "max_output_tokens must be >= 1");
    if (request_timeout.count() <= 0) throw Error(ErrorKind::kConfiguration, "request_timeout must be > 0");
  }
};

struct CompletionRecord {
  std::string prompt_digest;
  std::string raw_response;
  std::string model_name;
  std::chrono::milliseconds latency{0};
  int attempt_count = 0;
  std::string utterance_id;
};

/// SHA-256 over the model name, any prior conversation turns and the prompt.
inline std::string prompt_digest(std::string_view model_name, const RenderedPrompt& prompt) {
  detail::Sha256 h;
  h.update(model_name).update(std::string_view("\0", 1));
  for (const auto& m : prompt.context) {
    h.update(m.role).update(std::string_view("\0", 1)).update(m.content).update(std::string_view("\0", 1));
  }
  h.update(prompt.text);
  return h.hex();
}

/// Recorded responses, one JSON object per line. Concurrent lookups; writes
/// are serialized and appended to the backing file when there is one.
class FixtureStore {
 public:
  FixtureStore() = default;
  explicit FixtureStore(std::filesystem::path path, bool must_exist = true) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) {
      if (must_exist) throw Error(ErrorKind::kIo, "cannot open fixture file " + path_.string());
      return;
    }
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::trim_view(line).empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        entries_[j.at("prompt_digest").get<std::string>()] = {j.at("model_name").get<std::string>(),
                                                              j.at("raw_response").get<std::string>()};
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::kValidation,
                    path_.string() + ":" + std::to_string(lineno) + ": bad fixture record: " + e.what());
      }
    }
  }

  std::optional<std::string> find(const std::string& digest) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find(digest);
    if (it == entries_.end()) return std::nullopt;
    return it->second.raw_response;
  }

  void put(const std::string& digest, const std::string& model_name, const std::string& raw_response) {
    std::unique_lock lock(mu_);
    entries_[digest] = {model_name, raw_response};
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error(ErrorKind::kIo, "cannot append to fixture file " + path_.string());
    nlohmann::ordered_json j;
    j["prompt_digest"] = digest;
    j["model_name"] = model_name;
    j["raw_response"] = raw_response;
    out << j.dump() << '\n';
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  struct Entry {
    std::string model_name;
    std::string raw_response;
  };
  std::filesystem::path path_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, Entry> entries_;
};

/// One backend. Implementations throw emocause::Error; transient() errors
/// are retried by the gateway.
class CompletionProvider {
 public:
  virtual ~CompletionProvider() = default;
  virtual std::string complete(const ModelConfig& config, const RenderedPrompt& prompt,
                               const std::string& digest) = 0;
};

class ReplayProvider : public CompletionProvider {
 public:
  explicit ReplayProvider(std::shared_ptr<const FixtureStore> store) : store_(std::move(store)) {}

  std::string complete(const ModelConfig&, const RenderedPrompt& prompt, const std::string& digest) override {
    if (auto hit = store_->find(digest)) return *hit;
    throw Error(ErrorKind::kMissingFixture,
                "no recorded response for digest " + digest +
                    (prompt.utterance_id.empty() ? "" : " (utterance " + prompt.utterance_id + ")"));
  }

 private:
  std::shared_ptr<const FixtureStore> store_;
};

/// Wraps another provider and stores every successful response.
class RecordingProvider : public CompletionProvider {
 public:
  RecordingProvider(std::shared_ptr<CompletionProvider> inner, std::shared_ptr<FixtureStore> store)
      : inner_(std::move(inner)), store_(std::move(store)) {}

  std::string complete(const ModelConfig& config, const RenderedPrompt& prompt,
                       const std::string& digest) override {
    auto raw = inner_->complete(config, prompt, digest);
    store_->put(digest, config.model_name, raw);
    return raw;
  }

 private:
  std::shared_ptr<CompletionProvider> inner_;
  std::shared_ptr<FixtureStore> store_;
};

class OpenAIChatProvider : public CompletionProvider {
 public:
  /// An empty api_key reads the variable named by config.api_key_env.
  explicit OpenAIChatProvider(std::string api_key = {}) : api_key_(std::move(api_key)) {}

  std::string complete(const ModelConfig& config, const RenderedPrompt& prompt, const std::string&) override {
    auto key = api_key_.empty() ? detail::env_or_empty(config.api_key_env) : api_key_;
    if (key.empty()) {
      throw Error(ErrorKind::kAuth, "no API key; set " + config.api_key_env);
    }
    nlohmann::json body;
    body["model"] = config.model_name;
    body["temperature"] = config.temperature;
    body["max_tokens"] = config.max_output_tokens;
    auto& messages = body["messages"] = nlohmann::json::array();
    for (const auto& m : prompt.context) messages.push_back({{"role", m.role}, {"content", m.content}});
    messages.push_back({{"role", "user"}, {"content", prompt.text}});

    auto base = detail::BaseUrl::parse(config.base_url);
    httplib::Headers headers = {{"Authorization", "Bearer " + key}};
    auto res = detail::post_json(base, "/chat/completions", body.dump(), headers, config.request_timeout);
    if (res.status < 200 || res.status >= 300) detail::throw_for_status(res, "chat completion");
    try {
      auto j = nlohmann::json::parse(res.body);
      const auto& content = j.at("choices").at(0).at("message").at("content");
      if (content.is_null()) return {};
      return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kProvider, std::string("malformed chat completion: ") + e.what(), res.status);
    }
  }

 private:
  std::string api_key_;
};

namespace detail {

struct StubLexiconEntry {
  std::string_view emotion;
  std::string_view basic;
  std::vector<std::string_view> keywords;
};

// Checked in order; the first entry with a keyword hit decides.
inline const std::vector<StubLexiconEntry>& stub_lexicon() {
  static const std::vector<StubLexiconEntry> kLexicon = {
      {"Frustration", "Anger",
       {"frustrat", "awful", "annoying", "terrible", "painful", "useless", "nightmare", "keeps failing",
        "still failing", "still broken", "waste of time", "sick of", "fed up", "ugh", "hate"}},
      {"Anger", "Anger", {"angry", "furious", "ridiculous"}},
      {"Gratitude", "Love", {"thank", "appreciate"}},
      {"Love", "Love", {"love"}},
      {"Nervousness", "Fear", {"nervous", "anxious"}},
      {"Fear", "Fear", {"worried", "afraid", "scared", "concerned"}},
      {"Confusion", "Surprise", {"confus", "not sure", "no idea", "don't understand"}},
      {"Surprise", "Surprise", {"surprised", "wow", "unexpected"}},
      {"Disappointment", "Sadness", {"disappoint"}},
      {"Sadness", "Sadness", {"sad", "sorry", "unfortunately"}},
      {"Excitement", "Joy", {"excited", "can't wait"}},
      {"Joy", "Joy", {"glad", "happy", "great", "awesome", "nice", "lol"}},
  };
  return kLexicon;
}

inline std::string between(std::string_view s, std::string_view open, std::string_view close) {
  auto a = s.find(open);
  if (a == std::string_view::npos) return {};
  a += open.size();
  auto b = s.find(close, a);
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(a, b - a));
}

inline bool has_keyword(const std::string& lower, const StubLexiconEntry& e) {
  for (auto k : e.keywords) {
    if (lower.find(k) != std::string::npos) return true;
  }
  return false;
}

}  // namespace detail

/// Deterministic stand-in for a chat model. Classification: the first
/// lexicon entry whose keywords occur decides; a list of basic emotions gets
/// that entry's basic ancestor, any other list gets the entry's own name
/// (which may lie outside the list, like a real model's stray answer); no
/// hit gives Neutral. Cause extraction: the first clause of the utterance
/// containing a keyword of the requested emotion, quoted.
class StubChatProvider : public CompletionProvider {
 public:
  std::string complete(const ModelConfig&, const RenderedPrompt& prompt, const std::string&) override {
    const auto& text = prompt.text;
    if (text.find("Your task is to extract the span") != std::string::npos) return cause_reply(text);
    if (text.find("Emotions List: ") != std::string::npos) return classify_reply(text);
    return "Neutral";
  }

 private:
  static std::string classify_reply(const std::string& text) {
    auto list_line = detail::between(text, "Emotions List: ", ".\n");
    auto listed = detail::split(list_line, ',');
    bool basic_only = true;
    for (auto& n : listed) {
      n = detail::trim(n);
      basic_only = basic_only && parse_basic_emotion(n).has_value();
    }
    auto utterance = detail::ascii_lower(detail::between(text, "\n\nUtterance: ", ".\n\nIf there is no emotion"));
    for (const auto& e : detail::stub_lexicon()) {
      if (detail::has_keyword(utterance, e)) return std::string(basic_only ? e.basic : e.emotion);
    }
    return "Neutral";
  }

  static std::string cause_reply(const std::string& text) {
    auto emotion = detail::between(text, "causing the emotion ", " in the following GitHub utterance: ");
    auto utterance = detail::between(text, " in the following GitHub utterance: ",
                                     ".\n\nWrite the span of the cause");
    const detail::StubLexiconEntry* entry = nullptr;
    for (const auto& e : detail::stub_lexicon()) {
      if (detail::iequals(e.emotion, emotion)) {
        entry = &e;
        break;
      }
    }
    std::vector<std::string> clauses;
    std::string cur;
    for (char c : utterance) {
      if (c == '.' || c == '!' || c == '?' || c == ';' || c == ',' || c == '\n') {
        clauses.push_back(detail::trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    clauses.push_back(detail::trim(cur));
    std::erase_if(clauses, [](const std::string& s) { return s.empty(); });
    if (clauses.empty()) return "\"\"";
    if (entry) {
      for (const auto& c : clauses) {
        if (detail::has_keyword(detail::ascii_lower(c), *entry)) return "\"" + c + "\"";
      }
    }
    return "\"" + clauses.front() + "\"";
  }
};

/// Append-only JSONL log of every provider attempt.
class AuditLog {
 public:
  explicit AuditLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    out_.open(path_, std::ios::app);
    if (!out_) throw Error(ErrorKind::kIo, "cannot open audit log " + path_.string());
  }
  AuditLog() = default;  // in-memory only

  void append(nlohmann::ordered_json entry) {
    std::lock_guard lock(mu_);
    ++count_;
    if (out_.is_open()) {
      out_ << entry.dump() << '\n';
      out_.flush();
    }
    entries_.push_back(std::move(entry));
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return count_;
  }

  std::vector<nlohmann::ordered_json> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::ofstream out_;
  std::size_t count_ = 0;
  std::vector<nlohmann::ordered_json> entries_;
};

/// Result of one batch item: a record, or the error that ended its retries.
struct BatchItem {
  std::optional<CompletionRecord> record;
  std::optional<Error> error;
  bool ok() const { return record.has_value(); }
};

class LlmGateway {
 public:
  LlmGateway(ModelConfig config, std::shared_ptr<CompletionProvider> provider,
             std::shared_ptr<AuditLog> audit = nullptr, Sleeper sleeper = real_sleeper())
      : config_(std::move(config)),
        provider_(std::move(provider)),
        audit_(audit ? std::move(audit) : std::make_shared<AuditLog>()),
        sleeper_(std::move(sleeper)) {
    config_.validate();
    if (!provider_) throw Error(ErrorKind::kConfiguration, "no completion provider");
  }

  const ModelConfig& config() const { return config_; }
  AuditLog& audit() const { return *audit_; }

  /// Retries transient failures with exponential backoff (honoring
  /// Retry-After) up to config.max_retries extra attempts.
  CompletionRecord complete(const RenderedPrompt& prompt) const {
    const auto digest = prompt_digest(config_.model_name, prompt);
    const auto start = std::chrono::steady_clock::now();
    auto backoff = config_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        auto raw = provider_->complete(config_, prompt, digest);
        log(prompt, digest, attempt, "ok", 0, elapsed(t0));
        return {digest, std::move(raw), config_.model_name, elapsed(start), attempt, prompt.utterance_id};
      } catch (const Error& e) {
        log(prompt, digest, attempt, std::string(to_string(e.kind())), e.status(), elapsed(t0));
        if (!e.transient() || attempt > config_.max_retries) throw;
        sleeper_(e.retry_after().value_or(backoff));
        backoff = std::min(backoff * 2, config_.max_backoff);
      }
    }
  }

  /// Results in input order; at most `parallelism` calls in flight; each
  /// item's failure is reported in place.
  std::vector<BatchItem> complete_batch(std::span<const RenderedPrompt> prompts, int parallelism) const {
    if (parallelism < 1) throw Error(ErrorKind::kInvalidInput, "parallelism must be >= 1");
    std::vector<BatchItem> out(prompts.size());
    if (prompts.empty()) return out;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < prompts.size();) {
        try {
          out[i].record = complete(prompts[i]);
        } catch (const Error& e) {
          out[i].error = e;
        } catch (const std::exception& e) {
          out[i].error = Error(ErrorKind::kProvider, e.what());
        }
      }
    };
    auto n = std::min<std::size_t>(static_cast<std::size_t>(parallelism), prompts.size());
    if (n == 1) {
      worker();
      return out;
    }
    std::vector<std::jthread> threads;
    threads.reserve(n);
    for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
    threads.clear();
    return out;
  }

 private:
  static std::chrono::milliseconds elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
  }

  void log(const RenderedPrompt& prompt, const std::string& digest, int attempt, const std::string& outcome,
           int status, std::chrono::milliseconds latency) const {
    nlohmann::ordered_json j;
    auto now = std::chrono::system_clock::now();
    j["time_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
    j["provider"] = config_.provider_id;
    j["model_name"] = config_.model_name;
    j["prompt_digest"] = digest;
    j["utterance_id"] = prompt.utterance_id;
    j["attempt"] = attempt;
    j["outcome"] = outcome;
    j["status"] = status;
    j["latency_ms"] = latency.count();
    audit_->append(std::move(j));
  }

  ModelConfig config_;
  std::shared_ptr<CompletionProvider> provider_;
  std::shared_ptr<AuditLog> audit_;
  Sleeper sleeper_;
};

/// Provider by id: "replay" (needs `fixtures`), "live", "stub", or "record"
/// (live, storing responses into `fixtures`).
inline std::shared_ptr<CompletionProvider> make_provider(const ModelConfig& config,
                                                         std::shared_ptr<FixtureStore> fixtures = nullptr) {
  const auto& id = config.provider_id;
  if (id == "replay") {
    if (!fixtures) throw Error(ErrorKind::kConfiguration, "replay provider needs a fixture file");
    return std::make_shared<ReplayProvider>(std::move(fixtures));
  }
  if (id == "live") return std::make_shared<OpenAIChatProvider>();
  if (id == "stub") return std::make_shared<StubChatProvider>();
  if (id == "record") {
    if (!fixtures) throw Error(ErrorKind::kConfiguration, "record provider needs a fixture file");
    return std::make_shared<RecordingProvider>(std::make_shared<OpenAIChatProvider>(), std::move(fixtures));
  }
  throw Error(ErrorKind::kConfiguration, "unknown provider '" + id + "'");
}

}  // namespace emocause
