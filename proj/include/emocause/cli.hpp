#pragma once

// Pipeline commands. Every command writes its artifacts plus one
// manifest.json into the run directory; rerun() replays a manifest.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emocause/clustering.hpp"
#include "emocause/detail/sha256.hpp"
#include "emocause/error.hpp"
#include "emocause/ingest.hpp"
#include "emocause/llm_gateway.hpp"
#include "emocause/metrics.hpp"
#include "emocause/prompting.hpp"
#include "emocause/taxonomy.hpp"
#include "emocause/textprep.hpp"

namespace emocause {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr std::string_view kToolVersion = "1.0.0";
inline constexpr std::string_view kManifestName = "manifest.json";

enum class ConversationMode : std::uint8_t { kIndependent, kShared };

constexpr std::string_view to_string(ConversationMode m) {
  return m == ConversationMode::kShared ? "shared" : "independent";
}

inline ConversationMode parse_conversation_mode(std::string_view s) {
  if (detail::iequals(s, "independent")) return ConversationMode::kIndependent;
  if (detail::iequals(s, "shared")) return ConversationMode::kShared;
  throw Error(ErrorKind::kInvalidInput, "conversation mode must be independent or shared");
}

/// Settings shared by all commands. `provider`, `embedder` and `github`
/// replace the ones built from the config (tests inject mocks here).
struct RunOptions {
  ModelConfig model;
  std::optional<fs::path> fixtures;
  fs::path out_dir = "run";
  int parallelism = 8;
  std::uint64_t seed = 7;
  ConversationMode conversation = ConversationMode::kIndependent;
  std::string embedder = "stub";
  std::size_t embedding_dim = 256;
  EmbeddingConfig embedding;
  GitHubConfig github_config;

  std::shared_ptr<CompletionProvider> provider;
  std::shared_ptr<EmbeddingProvider> embedder_override;
  std::shared_ptr<GitHubClient> github;
  Sleeper sleeper = real_sleeper();
  std::ostream* log = &std::cerr;
  const EmotionTaxonomy* taxonomy = nullptr;
};

struct RunResult {
  fs::path manifest_path;
  ojson manifest;
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Command arguments

struct ClassifyArgs {
  fs::path dataset;
  EmotionListKind variant = EmotionListKind::kBasic;
  std::optional<Platform> platform;  // overrides each utterance's platform
};

struct ExtractArgs {
  fs::path dataset;
  std::optional<fs::path> predictions;  // predicted emotions for items without gold
};

enum class EvalMode : std::uint8_t { kF1, kBleu };

struct EvaluateArgs {
  fs::path gold;
  fs::path predicted;
  EvalMode mode = EvalMode::kF1;
  NeutralPooling neutral = NeutralPooling::kExclude;
  Smoothing smoothing = Smoothing::kHalvedCount;
  BleuAggregation aggregation = BleuAggregation::kCorpus;
};

struct MineArgs {
  std::optional<fs::path> comments;  // JSONL fixture used instead of fetching
  std::string repo;
  std::string since;
  std::string until;
  std::string emotion = "Frustration";
  EmotionListKind variant = EmotionListKind::kGoEmotions;
  ClusterConfig cluster;
  std::vector<std::string> exclude_associations = {"NONE"};
  std::vector<CommentKind> kinds = {CommentKind::kIssueComments, CommentKind::kPrComments};
  std::size_t top_terms = 5;
};

struct SweepArgs {
  fs::path input;  // vectors (.tsv / embeddings .jsonl) or a dataset of texts
  std::vector<double> eps = default_eps_grid();
  std::vector<int> min_pts = default_min_pts_grid();
  ClusterConfig report_cell;
};

struct ImportArgs {
  fs::path csv;
  CsvImportSpec spec;
};

struct SplitArgs {
  fs::path dataset;
  double ratio = 0.8;
  bool basic_strata = false;
};

struct FetchArgs {
  std::string repo;
  std::string since;
  std::string until;
  std::vector<CommentKind> kinds = {CommentKind::kIssueComments, CommentKind::kPrComments};
};

namespace detail {

inline std::string sha256_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::kNotFound, "cannot read " + p.string());
  Sha256 h;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    h.update(std::string_view(buf, static_cast<std::size_t>(in.gcount())));
  }
  return h.hex();
}

inline void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + p.string());
  out << content;
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + p.string());
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::kNotFound, "missing artifact " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_jsonl(const fs::path& p, const std::vector<ojson>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  write_file(p, out);
}

inline std::vector<ojson> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::kNotFound, "missing file " + p.string());
  std::vector<ojson> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim_view(line).empty()) continue;
    try {
      rows.push_back(ojson::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kValidation, p.string() + ":" + std::to_string(n) + ": malformed JSON: " + e.what());
    }
  }
  return rows;
}

inline ojson error_json(const Error& e) { return {{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}}; }

inline std::string list_preview(const std::vector<std::string>& ids, std::size_t max = 20) {
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < max; ++i) out += (i ? ", " : "") + ids[i];
  if (ids.size() > max) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string kinds_text(const std::vector<CommentKind>& kinds) {
  std::vector<std::string> v;
  for (auto k : kinds) v.emplace_back(to_string(k));
  return join(v, ",");
}

inline std::vector<CommentKind> parse_kinds(const ojson& j) {
  std::vector<CommentKind> out;
  for (const auto& s : j) {
    auto v = s.get<std::string>();
    if (v == "issue_comments") out.push_back(CommentKind::kIssueComments);
    else if (v == "pr_comments") out.push_back(CommentKind::kPrComments);
    else throw Error(ErrorKind::kInvalidInput, "unknown comment kind '" + v + "'");
  }
  return out;
}

inline ojson kinds_json(const std::vector<CommentKind>& kinds) {
  ojson a = ojson::array();
  for (auto k : kinds) a.push_back(std::string(to_string(k)));
  return a;
}

inline std::string now_text() {
  return format_timestamp(std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()));
}

/// Collects inputs/outputs of one run and writes the manifest.
class ManifestWriter {
 public:
  ManifestWriter(std::string command, const RunOptions& opt, ojson args)
      : opt_(opt), started_(now_text()) {
    m_["command"] = std::move(command);
    m_["tool_version"] = std::string(kToolVersion);
    m_["status"] = "running";
    ojson cfg;
    cfg["provider"] = opt.model.provider_id;
    cfg["model"] = opt.model.model_name;
    cfg["temperature"] = opt.model.temperature;
    cfg["max_output_tokens"] = opt.model.max_output_tokens;
    cfg["max_retries"] = opt.model.max_retries;
    cfg["request_timeout_ms"] = opt.model.request_timeout.count();
    cfg["base_url"] = opt.model.base_url;
    cfg["fixtures"] = opt.fixtures ? ojson(fs::absolute(*opt.fixtures).string()) : ojson(nullptr);
    cfg["parallelism"] = opt.parallelism;
    cfg["seed"] = opt.seed;
    cfg["conversation"] = std::string(to_string(opt.conversation));
    cfg["embedder"] = opt.embedder;
    cfg["embedding_dim"] = opt.embedding_dim;
    cfg["embedding_model"] = opt.embedding.model_name;
    cfg["github_base_url"] = opt.github_config.base_url;
    m_["config"] = std::move(cfg);
    m_["args"] = std::move(args);
    m_["inputs"] = ojson::object();
    m_["outputs"] = ojson::object();
    m_["summary"] = ojson::object();
    m_["warnings"] = ojson::array();
    fs::create_directories(opt.out_dir);
  }

  void input(const std::string& name, const fs::path& p) {
    m_["inputs"][name] = {{"path", fs::absolute(p).string()}, {"sha256", sha256_file(p)}};
  }

  /// Writes an artifact under the run directory and records it.
  fs::path output(const std::string& name, const std::string& file, const std::string& content) {
    auto p = opt_.out_dir / file;
    write_file(p, content);
    m_["outputs"][name] = file;
    return p;
  }
  fs::path output_jsonl(const std::string& name, const std::string& file, const std::vector<ojson>& rows) {
    auto p = opt_.out_dir / file;
    write_jsonl(p, rows);
    m_["outputs"][name] = file;
    return p;
  }
  void record_output(const std::string& name, const std::string& file) { m_["outputs"][name] = file; }

  fs::path path(const std::string& file) const { return opt_.out_dir / file; }
  ojson& summary() { return m_["summary"]; }

  void warn(const std::string& w) {
    warnings_.push_back(w);
    m_["warnings"].push_back(w);
    if (opt_.log) *opt_.log << "warning: " << w << '\n';
  }

  RunResult finish() { return write("ok"); }

  RunResult fail(const std::string& stage, const std::exception& e) {
    m_["failed_stage"] = stage;
    m_["error"] = e.what();
    return write("failed");
  }

 private:
  RunResult write(const std::string& status) {
    m_["status"] = status;
    ojson digest_parts = ojson::array();
    for (const auto& [name, v] : m_["inputs"].items()) digest_parts.push_back(name + ":" + v["sha256"].get<std::string>());
    m_["input_digest"] = sha256_hex(digest_parts.dump());
    m_["started_at"] = started_;
    m_["finished_at"] = now_text();
    auto p = opt_.out_dir / std::string(kManifestName);
    write_file(p, m_.dump(2) + "\n");
    return {p, m_, warnings_};
  }

  const RunOptions& opt_;
  std::string started_;
  ojson m_;
  std::vector<std::string> warnings_;
};

inline const EmotionTaxonomy& taxonomy_of(const RunOptions& opt, std::unique_ptr<EmotionTaxonomy>& holder) {
  if (opt.taxonomy) return *opt.taxonomy;
  holder = std::make_unique<EmotionTaxonomy>(build_default_taxonomy());
  return *holder;
}

inline LlmGateway make_gateway(const RunOptions& opt, ManifestWriter& mw) {
  std::shared_ptr<CompletionProvider> provider = opt.provider;
  if (!provider) {
    std::shared_ptr<FixtureStore> store;
    if (opt.model.provider_id == "replay") {
      if (!opt.fixtures) throw Error(ErrorKind::kConfiguration, "replay provider needs --fixtures");
      store = std::make_shared<FixtureStore>(*opt.fixtures, true);
      mw.input("fixtures", *opt.fixtures);
    } else if (opt.model.provider_id == "record") {
      if (!opt.fixtures) throw Error(ErrorKind::kConfiguration, "record provider needs --fixtures");
      store = std::make_shared<FixtureStore>(*opt.fixtures, false);
    }
    provider = make_provider(opt.model, store);
  }
  auto audit = std::make_shared<AuditLog>(mw.path("audit.jsonl"));
  mw.record_output("audit", "audit.jsonl");
  return LlmGateway(opt.model, std::move(provider), std::move(audit), opt.sleeper);
}

inline std::shared_ptr<EmbeddingProvider> make_embedder(const RunOptions& opt) {
  if (opt.embedder_override) return opt.embedder_override;
  if (opt.embedder == "stub") {
    auto sw = std::make_shared<const StopwordSet>(default_stopwords());
    return std::make_shared<StubEmbeddingProvider>(opt.embedding_dim, opt.seed, sw);
  }
  if (opt.embedder == "live") return std::make_shared<OpenAIEmbeddingProvider>(opt.embedding);
  throw Error(ErrorKind::kConfiguration, "unknown embedder '" + opt.embedder + "'");
}

/// Gold labels as basic emotions; empty or "Neutral" means Neutral.
inline GoldLabels gold_basic(const EmotionTaxonomy& tax, const Utterance& u) {
  GoldLabels g;
  for (const auto& name : u.gold_emotions) {
    if (detail::iequals(trim(name), kNeutral)) continue;
    g.insert(EmotionLabel(tax.map_to_basic(trim(name))));
  }
  if (g.empty()) g.insert(EmotionLabel::neutral());
  return g;
}

inline std::string cause_key(const std::string& id, std::string_view emotion) {
  return id + '\x1f' + ascii_lower(trim(emotion));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Argument serialization (manifests must be enough to re-run)

inline ojson to_json(const ClassifyArgs& a) {
  return {{"dataset", fs::absolute(a.dataset).string()},
          {"variant", std::string(to_string(a.variant))},
          {"platform", a.platform ? ojson(std::string(slug(*a.platform))) : ojson(nullptr)}};
}

inline ojson to_json(const ExtractArgs& a) {
  return {{"dataset", fs::absolute(a.dataset).string()},
          {"predictions", a.predictions ? ojson(fs::absolute(*a.predictions).string()) : ojson(nullptr)}};
}

inline ojson to_json(const EvaluateArgs& a) {
  return {{"gold", fs::absolute(a.gold).string()},
          {"predicted", fs::absolute(a.predicted).string()},
          {"mode", a.mode == EvalMode::kF1 ? "f1" : "bleu"},
          {"neutral_pooled", a.neutral == NeutralPooling::kInclude},
          {"smoothing", a.smoothing == Smoothing::kNone ? "none" : "halved"},
          {"aggregation", a.aggregation == BleuAggregation::kCorpus ? "corpus" : "sentence_mean"}};
}

inline ojson to_json(const MineArgs& a) {
  return {{"comments", a.comments ? ojson(fs::absolute(*a.comments).string()) : ojson(nullptr)},
          {"repo", a.repo},
          {"since", a.since},
          {"until", a.until},
          {"emotion", a.emotion},
          {"variant", std::string(to_string(a.variant))},
          {"eps", a.cluster.eps},
          {"min_pts", a.cluster.min_pts},
          {"exclude_associations", a.exclude_associations},
          {"kinds", detail::kinds_json(a.kinds)},
          {"top_terms", a.top_terms}};
}

inline ojson to_json(const SweepArgs& a) {
  return {{"input", fs::absolute(a.input).string()},
          {"eps", a.eps},
          {"min_pts", a.min_pts},
          {"report_eps", a.report_cell.eps},
          {"report_min_pts", a.report_cell.min_pts}};
}

inline ojson to_json(const ImportArgs& a) {
  return {{"csv", fs::absolute(a.csv).string()},
          {"platform", std::string(slug(a.spec.platform))},
          {"text_column", a.spec.text_column},
          {"id_column", a.spec.id_column},
          {"label_column", a.spec.label_column},
          {"flag_columns", a.spec.flag_columns},
          {"separator", std::string(1, a.spec.separator)}};
}

inline ojson to_json(const SplitArgs& a) {
  return {{"dataset", fs::absolute(a.dataset).string()}, {"ratio", a.ratio}, {"basic_strata", a.basic_strata}};
}

inline ojson to_json(const FetchArgs& a) {
  return {{"repo", a.repo}, {"since", a.since}, {"until", a.until}, {"kinds", detail::kinds_json(a.kinds)}};
}

namespace detail {

inline EmotionListKind list_kind(const ojson& j) {
  auto k = parse_emotion_list_kind(j.get<std::string>());
  if (!k) throw Error(ErrorKind::kInvalidInput, "unknown variant " + j.dump());
  return *k;
}

inline std::optional<fs::path> opt_path(const ojson& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return fs::path(j[key].get<std::string>());
}

}  // namespace detail

inline ClassifyArgs classify_args_from_json(const ojson& j) {
  ClassifyArgs a;
  a.dataset = j.at("dataset").get<std::string>();
  a.variant = detail::list_kind(j.at("variant"));
  if (j.contains("platform") && !j["platform"].is_null()) a.platform = parse_platform(j["platform"].get<std::string>());
  return a;
}

inline ExtractArgs extract_args_from_json(const ojson& j) {
  return {j.at("dataset").get<std::string>(), detail::opt_path(j, "predictions")};
}

inline EvaluateArgs evaluate_args_from_json(const ojson& j) {
  EvaluateArgs a;
  a.gold = j.at("gold").get<std::string>();
  a.predicted = j.at("predicted").get<std::string>();
  a.mode = j.at("mode") == "bleu" ? EvalMode::kBleu : EvalMode::kF1;
  a.neutral = j.value("neutral_pooled", false) ? NeutralPooling::kInclude : NeutralPooling::kExclude;
  a.smoothing = j.value("smoothing", "halved") == "none" ? Smoothing::kNone : Smoothing::kHalvedCount;
  a.aggregation = j.value("aggregation", "corpus") == "corpus" ? BleuAggregation::kCorpus : BleuAggregation::kSentenceMean;
  return a;
}

inline MineArgs mine_args_from_json(const ojson& j) {
  MineArgs a;
  a.comments = detail::opt_path(j, "comments");
  a.repo = j.value("repo", "");
  a.since = j.value("since", "");
  a.until = j.value("until", "");
  a.emotion = j.at("emotion").get<std::string>();
  a.variant = detail::list_kind(j.at("variant"));
  a.cluster.eps = j.at("eps").get<double>();
  a.cluster.min_pts = j.at("min_pts").get<int>();
  a.exclude_associations = j.at("exclude_associations").get<std::vector<std::string>>();
  a.kinds = detail::parse_kinds(j.at("kinds"));
  a.top_terms = j.value("top_terms", std::size_t{5});
  return a;
}

inline SweepArgs sweep_args_from_json(const ojson& j) {
  SweepArgs a;
  a.input = j.at("input").get<std::string>();
  a.eps = j.at("eps").get<std::vector<double>>();
  a.min_pts = j.at("min_pts").get<std::vector<int>>();
  a.report_cell.eps = j.at("report_eps").get<double>();
  a.report_cell.min_pts = j.at("report_min_pts").get<int>();
  return a;
}

inline ImportArgs import_args_from_json(const ojson& j) {
  ImportArgs a;
  a.csv = j.at("csv").get<std::string>();
  a.spec.platform = parse_platform(j.at("platform").get<std::string>()).value_or(Platform::kGitHub);
  a.spec.text_column = j.at("text_column").get<std::string>();
  a.spec.id_column = j.at("id_column").get<std::string>();
  a.spec.label_column = j.at("label_column").get<std::string>();
  a.spec.flag_columns = j.at("flag_columns").get<std::vector<std::string>>();
  a.spec.separator = j.at("separator").get<std::string>().at(0);
  return a;
}

inline SplitArgs split_args_from_json(const ojson& j) {
  return {j.at("dataset").get<std::string>(), j.at("ratio").get<double>(), j.value("basic_strata", false)};
}

inline FetchArgs fetch_args_from_json(const ojson& j) {
  return {j.at("repo").get<std::string>(), j.at("since").get<std::string>(), j.at("until").get<std::string>(),
          detail::parse_kinds(j.at("kinds"))};
}

// ---------------------------------------------------------------------------
// Stages shared by classify, extract-causes and mine

struct Prediction {
  std::string id;
  Platform platform = Platform::kGitHub;
  EmotionListKind variant = EmotionListKind::kBasic;
  std::string prompt_digest;
  std::string raw_response;
  std::optional<LabelResolution> resolution;
  std::optional<Error> error;
};

inline ojson to_json(const Prediction& p, const std::string& model) {
  ojson j;
  j["id"] = p.id;
  j["platform"] = std::string(slug(p.platform));
  j["variant"] = std::string(to_string(p.variant));
  j["model_name"] = model;
  j["prompt_digest"] = p.prompt_digest;
  j["raw_response"] = p.raw_response;
  if (p.resolution) {
    j["outcome"] = std::string(to_string(p.resolution->outcome));
    j["label"] = p.resolution->label;
    j["basic"] = p.resolution->basic ? ojson(std::string(to_string(*p.resolution->basic))) : ojson(nullptr);
    j["prediction"] = std::string(p.resolution->prediction().name());
  } else {
    j["outcome"] = "error";
    j["label"] = nullptr;
    j["basic"] = nullptr;
    j["prediction"] = std::string(kNeutral);
  }
  j["error"] = p.error ? detail::error_json(*p.error) : ojson(nullptr);
  return j;
}

/// Classifies every utterance; `extra_allowed` widens the accepted label set
/// beyond the prompted list.
inline std::vector<Prediction> classify_items(const EmotionTaxonomy& tax, const LlmGateway& gw,
                                              std::span<const Utterance> items, EmotionListKind variant,
                                              std::optional<Platform> platform_override, int parallelism,
                                              const std::vector<std::string>& extra_allowed = {}) {
  std::vector<RenderedPrompt> prompts;
  std::vector<Prediction> out(items.size());
  std::vector<std::size_t> prompt_of(items.size(), SIZE_MAX);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& u = items[i];
    out[i].id = u.id;
    out[i].platform = platform_override.value_or(u.platform);
    out[i].variant = variant;
    try {
      auto p = render_classification_prompt(tax, PromptVariant::classification(out[i].platform, variant), u.text, u.id);
      out[i].prompt_digest = prompt_digest(gw.config().model_name, p);
      prompt_of[i] = prompts.size();
      prompts.push_back(std::move(p));
    } catch (const Error& e) {
      out[i].error = e;
    }
  }
  auto results = gw.complete_batch(prompts, parallelism);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (prompt_of[i] == SIZE_MAX) continue;
    auto& r = results[prompt_of[i]];
    if (!r.ok()) {
      out[i].error = r.error;
      continue;
    }
    out[i].raw_response = r.record->raw_response;
    auto allowed = emotion_list(tax, PromptVariant::classification(out[i].platform, variant));
    for (const auto& e : extra_allowed) {
      if (std::find(allowed.begin(), allowed.end(), e) == allowed.end()) allowed.push_back(e);
    }
    out[i].resolution = parse_emotion_response(tax, r.record->raw_response, allowed);
  }
  return out;
}

struct CauseRecord {
  std::string id;
  std::string emotion;
  std::string prompt_digest;
  std::string raw_response;
  std::optional<ParsedCauseResponse> parsed;
  std::optional<Error> error;
};

inline ojson to_json(const CauseRecord& c, const std::string& model) {
  ojson j;
  j["id"] = c.id;
  j["emotion"] = c.emotion;
  j["model_name"] = model;
  j["prompt_digest"] = c.prompt_digest;
  j["raw_response"] = c.raw_response;
  j["span"] = c.parsed ? ojson(c.parsed->span) : ojson(nullptr);
  j["quoted"] = c.parsed ? c.parsed->quoted : false;
  j["error"] = c.error ? detail::error_json(*c.error) : ojson(nullptr);
  return j;
}

struct CauseRequest {
  const Utterance* utterance = nullptr;
  std::string emotion;
  std::vector<ChatMessage> context;  // prior classification turn in shared mode
};

inline std::vector<CauseRecord> extract_items(const EmotionTaxonomy& tax, const LlmGateway& gw,
                                              std::span<const CauseRequest> requests, int parallelism) {
  std::vector<RenderedPrompt> prompts;
  std::vector<CauseRecord> out(requests.size());
  std::vector<std::size_t> prompt_of(requests.size(), SIZE_MAX);
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& rq = requests[i];
    out[i].id = rq.utterance->id;
    out[i].emotion = rq.emotion;
    try {
      auto p = render_cause_prompt(tax, rq.emotion, rq.utterance->text, rq.utterance->id);
      p.context = rq.context;
      out[i].prompt_digest = prompt_digest(gw.config().model_name, p);
      prompt_of[i] = prompts.size();
      prompts.push_back(std::move(p));
    } catch (const Error& e) {
      out[i].error = e;
    }
  }
  auto results = gw.complete_batch(prompts, parallelism);
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (prompt_of[i] == SIZE_MAX) continue;
    auto& r = results[prompt_of[i]];
    if (!r.ok()) {
      out[i].error = r.error;
      continue;
    }
    out[i].raw_response = r.record->raw_response;
    out[i].parsed = parse_cause_response(r.record->raw_response);
  }
  return out;
}

// ---------------------------------------------------------------------------
// classify

inline RunResult cmd_classify(const ClassifyArgs& args, const RunOptions& opt) {
  detail::ManifestWriter mw("classify", opt, to_json(args));
  std::string stage = "load";
  try {
    std::unique_ptr<EmotionTaxonomy> holder;
    const auto& tax = detail::taxonomy_of(opt, holder);
    mw.input("dataset", args.dataset);
    auto items = load_jsonl(args.dataset, {true, &tax});
    if (items.empty()) mw.warn("dataset " + args.dataset.string() + " is empty");
    stage = "classify";
    auto gw = detail::make_gateway(opt, mw);
    auto preds = classify_items(tax, gw, items, args.variant, args.platform, opt.parallelism);

    std::vector<ojson> rows;
    std::size_t errors = 0, hallucinations = 0, neutral = 0;
    std::map<std::string, std::size_t> by_label;
    for (const auto& p : preds) {
      rows.push_back(to_json(p, opt.model.model_name));
      if (p.error) {
        ++errors;
        continue;
      }
      if (p.resolution->is_hallucination()) ++hallucinations;
      else if (p.resolution->outcome == LabelResolution::Outcome::kNeutral) ++neutral;
      ++by_label[p.resolution->label];
    }
    mw.output_jsonl("predictions", "predictions.jsonl", rows);
    auto& s = mw.summary();
    s["items"] = preds.size();
    s["errors"] = errors;
    s["hallucinations"] = hallucinations;
    s["neutral"] = neutral;
    s["labels"] = by_label;
    if (errors) mw.warn(std::to_string(errors) + " items failed; see predictions.jsonl");
    return mw.finish();
  } catch (const std::exception& e) {
    mw.fail(stage, e);
    throw;
  }
}

// ---------------------------------------------------------------------------
// extract-causes

inline RunResult cmd_extract_causes(const ExtractArgs& args, const RunOptions& opt) {
  detail::ManifestWriter mw("extract-causes", opt, to_json(args));
  std::string stage = "load";
  try {
    std::unique_ptr<EmotionTaxonomy> holder;
    const auto& tax = detail::taxonomy_of(opt, holder);
    mw.input("dataset", args.dataset);
    auto items = load_jsonl(args.dataset, {true, &tax});
    if (items.empty()) mw.warn("dataset " + args.dataset.string() + " is empty");

    std::map<std::string, ojson> predicted;
    if (args.predictions) {
      mw.input("predictions", *args.predictions);
      for (auto& row : detail::read_jsonl(*args.predictions)) predicted[row.at("id").get<std::string>()] = row;
    }
    if (opt.conversation == ConversationMode::kShared && !args.predictions) {
      throw Error(ErrorKind::kConfiguration, "shared conversation mode needs --predictions");
    }

    std::vector<CauseRequest> requests;
    std::size_t skipped = 0;
    for (const auto& u : items) {
      std::vector<std::string> emotions;
      for (const auto& g : u.gold_emotions) {
        if (!detail::iequals(detail::trim(g), kNeutral)) emotions.push_back(detail::trim(g));
      }
      auto it = predicted.find(u.id);
      if (emotions.empty() && it != predicted.end() && it->second.value("outcome", "") == "matched") {
        emotions.push_back(it->second["label"].get<std::string>());
      }
      if (emotions.empty()) {
        ++skipped;
        continue;
      }
      std::vector<ChatMessage> context;
      if (opt.conversation == ConversationMode::kShared && it != predicted.end() && it->second["error"].is_null()) {
        auto variant = detail::list_kind(it->second["variant"]);
        auto platform = parse_platform(it->second["platform"].get<std::string>()).value_or(u.platform);
        auto first = render_classification_prompt(tax, PromptVariant::classification(platform, variant), u.text, u.id);
        context = {ChatMessage{"user", first.text}, ChatMessage{"assistant", it->second["raw_response"].get<std::string>()}};
      }
      for (const auto& e : emotions) requests.push_back({&u, e, context});
    }

    stage = "extract";
    auto gw = detail::make_gateway(opt, mw);
    auto causes = extract_items(tax, gw, requests, opt.parallelism);
    std::vector<ojson> rows;
    std::size_t errors = 0, unquoted = 0;
    for (const auto& c : causes) {
      rows.push_back(to_json(c, opt.model.model_name));
      if (c.error) ++errors;
      else if (!c.parsed->quoted) ++unquoted;
    }
    mw.output_jsonl("causes", "causes.jsonl", rows);
    auto& s = mw.summary();
    s["items"] = items.size();
    s["records"] = causes.size();
    s["skipped_neutral"] = skipped;
    s["errors"] = errors;
    s["unquoted"] = unquoted;
    if (errors) mw.warn(std::to_string(errors) + " items failed; see causes.jsonl");
    return mw.finish();
  } catch (const std::exception& e) {
    mw.fail(stage, e);
    throw;
  }
}

// ---------------------------------------------------------------------------
// evaluate

struct LengthStats {
  double mean_utterance_tokens = 0.0;
  double mean_gold_span_tokens = 0.0;
  double mean_extracted_span_tokens = 0.0;
};

inline ojson to_json(const LengthStats& s) {
  return {{"mean_utterance_tokens", s.mean_utterance_tokens},
          {"mean_gold_span_tokens", s.mean_gold_span_tokens},
          {"mean_extracted_span_tokens", s.mean_extracted_span_tokens}};
}

inline std::string format_length_markdown(const LengthStats& s) {
  return "| Mean utterance length | Mean gold span length | Mean extracted span length |\n|---|---|---|\n| " +
         detail::format_fixed(s.mean_utterance_tokens, 2) + " | " + detail::format_fixed(s.mean_gold_span_tokens, 2) +
         " | " + detail::format_fixed(s.mean_extracted_span_tokens, 2) + " |\n";
}

inline std::string format_length_tsv(const LengthStats& s) {
  return "mean_utterance_tokens\tmean_gold_span_tokens\tmean_extracted_span_tokens\n" +
         detail::format_fixed(s.mean_utterance_tokens, 2) + "\t" + detail::format_fixed(s.mean_gold_span_tokens, 2) +
         "\t" + detail::format_fixed(s.mean_extracted_span_tokens, 2) + "\n";
}

struct BleuEvaluation {
  BleuReport report;
  LengthStats lengths;
  std::size_t pairs = 0;
  std::size_t candidate_errors = 0;
  std::size_t unmatched_candidates = 0;
};

/// Pairs every (utterance, emotion) group of gold spans with the extracted
/// span for the same key; a missing candidate is an error.
inline BleuEvaluation evaluate_bleu(std::span<const Utterance> gold, const std::vector<ojson>& causes,
                                    const BleuConfig& config, BleuAggregation aggregation) {
  std::map<std::string, const ojson*> cand;
  for (const auto& c : causes) cand[detail::cause_key(c.at("id").get<std::string>(), c.at("emotion").get<std::string>())] = &c;

  BleuEvaluation ev;
  std::vector<BleuPair> pairs;
  std::vector<std::string> missing;
  std::set<std::string> used;
  double utt_tokens = 0, gold_tokens = 0, cand_tokens = 0;
  std::size_t gold_spans = 0;
  for (const auto& u : gold) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<TokenList>> refs;
    for (const auto& gc : u.gold_causes) {
      auto key = detail::cause_key(u.id, gc.emotion);
      if (!refs.contains(key)) order.push_back(key);
      auto toks = preprocess_for_eval(gc.span);
      gold_tokens += static_cast<double>(toks.size());
      ++gold_spans;
      refs[key].push_back(std::move(toks));
    }
    for (const auto& key : order) {
      auto it = cand.find(key);
      if (it == cand.end()) {
        missing.push_back(u.id + " (" + key.substr(key.find('\x1f') + 1) + ")");
        continue;
      }
      used.insert(key);
      const auto& c = *it->second;
      BleuPair p;
      if (c.contains("span") && c["span"].is_string()) p.candidate = preprocess_for_eval(c["span"].get<std::string>());
      if (!c["error"].is_null()) ++ev.candidate_errors;
      p.references = std::move(refs[key]);
      cand_tokens += static_cast<double>(p.candidate.size());
      utt_tokens += static_cast<double>(preprocess_for_eval(u.text).size());
      pairs.push_back(std::move(p));
    }
  }
  if (!missing.empty()) {
    throw Error(ErrorKind::kValidation, "no extracted cause for " + std::to_string(missing.size()) +
                                            " gold entries: " + detail::list_preview(missing));
  }
  if (pairs.empty()) throw Error(ErrorKind::kInvalidInput, "gold file has no cause spans");
  ev.unmatched_candidates = cand.size() - used.size();
  ev.pairs = pairs.size();
  ev.report = bleu(pairs, config, aggregation);
  auto n = static_cast<double>(pairs.size());
  ev.lengths = {utt_tokens / n, gold_spans ? gold_tokens / static_cast<double>(gold_spans) : 0.0, cand_tokens / n};
  return ev;
}

struct F1Evaluation {
  EvalReport report;
  std::size_t errors = 0;
  std::size_t hallucinations = 0;
};

inline F1Evaluation evaluate_f1(const EmotionTaxonomy& tax, std::span<const Utterance> gold,
                                const std::vector<ojson>& predictions, NeutralPooling neutral) {
  std::map<std::string, const ojson*> by_id;
  for (const auto& p : predictions) by_id[p.at("id").get<std::string>()] = &p;
  std::vector<std::string> missing, extra;
  std::set<std::string> gold_ids;
  for (const auto& u : gold) {
    gold_ids.insert(u.id);
    if (!by_id.contains(u.id)) missing.push_back(u.id);
  }
  for (const auto& [id, _] : by_id) {
    if (!gold_ids.contains(id)) extra.push_back(id);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "ids do not align;";
    if (!missing.empty()) msg += " missing predictions: " + detail::list_preview(missing) + ";";
    if (!extra.empty()) msg += " predictions without gold: " + detail::list_preview(extra) + ";";
    throw Error(ErrorKind::kValidation, msg);
  }
  F1Evaluation ev;
  std::vector<GoldLabels> g;
  std::vector<EmotionLabel> p;
  for (const auto& u : gold) {
    g.push_back(detail::gold_basic(tax, u));
    const auto& row = *by_id.at(u.id);
    if (!row["error"].is_null()) ++ev.errors;
    if (row.value("outcome", "") == "hallucination") ++ev.hallucinations;
    auto label = EmotionLabel::parse(row.value("prediction", std::string(kNeutral)));
    p.push_back(label.value_or(EmotionLabel::neutral()));
  }
  std::set<BasicEmotion> classes(kBasicEmotions.begin(), kBasicEmotions.end());
  ev.report = classification_report(g, p, classes, neutral);
  return ev;
}

inline std::string model_of(const std::vector<ojson>& rows) {
  for (const auto& r : rows) {
    if (r.contains("model_name") && r["model_name"].is_string()) return r["model_name"].get<std::string>();
  }
  return "model";
}

inline RunResult cmd_evaluate(const EvaluateArgs& args, const RunOptions& opt) {
  detail::ManifestWriter mw("evaluate", opt, to_json(args));
  std::string stage = "load";
  try {
    std::unique_ptr<EmotionTaxonomy> holder;
    const auto& tax = detail::taxonomy_of(opt, holder);
    mw.input("gold", args.gold);
    mw.input("predicted", args.predicted);
    auto gold = load_jsonl(args.gold, {true, &tax});
    auto rows = detail::read_jsonl(args.predicted);
    auto model = model_of(rows);
    stage = "score";
    if (args.mode == EvalMode::kF1) {
      auto ev = evaluate_f1(tax, gold, rows, args.neutral);
      ojson j = {{"mode", "f1"},
                 {"model", model},
                 {"errors", ev.errors},
                 {"hallucinations", ev.hallucinations},
                 {"report", to_json(ev.report)}};
      mw.output("report", "eval.json", j.dump(2) + "\n");
      mw.output("markdown", "eval.md", format_eval_markdown(ev.report, model));
      mw.output("tsv", "eval.tsv", format_eval_tsv(ev.report));
      mw.summary() = {{"items", ev.report.items}, {"micro_f1", ev.report.micro.f1}, {"errors", ev.errors},
                      {"hallucinations", ev.hallucinations}};
    } else {
      BleuConfig cfg;
      cfg.smoothing = args.smoothing;
      auto ev = evaluate_bleu(gold, rows, cfg, args.aggregation);
      ojson j = {{"mode", "bleu"},
                 {"model", model},
                 {"aggregation", args.aggregation == BleuAggregation::kCorpus ? "corpus" : "sentence_mean"},
                 {"smoothing", args.smoothing == Smoothing::kNone ? "none" : "halved"},
                 {"pairs", ev.pairs},
                 {"candidate_errors", ev.candidate_errors},
                 {"unmatched_candidates", ev.unmatched_candidates},
                 {"report", to_json(ev.report)},
                 {"lengths", to_json(ev.lengths)}};
      mw.output("report", "bleu.json", j.dump(2) + "\n");
      mw.output("markdown", "bleu.md", format_bleu_markdown(ev.report, model) + "\n" + format_length_markdown(ev.lengths));
      mw.output("tsv", "bleu.tsv", format_bleu_tsv(ev.report, model) + "\n" + format_length_tsv(ev.lengths));
      ojson s = {{"pairs", ev.pairs}};
      for (int n = 1; n <= 4; ++n) s["bleu_" + std::to_string(n)] = ev.report.bleu(n);
      mw.summary() = s;
      if (ev.unmatched_candidates) {
        mw.warn(std::to_string(ev.unmatched_candidates) + " extracted causes have no gold span and were ignored");
      }
    }
    return mw.finish();
  } catch (const std::exception& e) {
    mw.fail(stage, e);
    throw;
  }
}

// ---------------------------------------------------------------------------
// fetch and mine

namespace detail {

inline RepoWindow make_window(const std::string& repo, const std::string& since, const std::string& until,
                              std::vector<CommentKind> kinds) {
  RepoWindow w{repo, parse_timestamp(since), parse_timestamp(until), std::move(kinds)};
  w.validate();
  return w;
}

inline GitHubClient& github_of(const RunOptions& opt, std::shared_ptr<GitHubClient>& holder) {
  if (opt.github) return *opt.github;
  holder = std::make_shared<GitHubClient>(opt.github_config, opt.sleeper);
  return *holder;
}

}  // namespace detail

inline RunResult cmd_fetch(const FetchArgs& args, const RunOptions& opt) {
  detail::ManifestWriter mw("fetch", opt, to_json(args));
  try {
    auto w = detail::make_window(args.repo, args.since, args.until, args.kinds);
    std::shared_ptr<GitHubClient> holder;
    auto items = detail::github_of(opt, holder).fetch_comments(w, mw.path("fetch.checkpoint.json"));
    save_jsonl(items, mw.path("comments.jsonl"));
    mw.record_output("comments", "comments.jsonl");
    mw.record_output("checkpoint", "fetch.checkpoint.json");
    mw.summary() = {{"comments", items.size()}};
    return mw.finish();
  } catch (const std::exception& e) {
    mw.fail("fetch", e);
    throw;
  }
}

/// fetch -> drop excluded associations -> classify -> keep `emotion` (at the
/// granular node) -> extract causes -> strip markup -> embed -> DBSCAN ->
/// summaries and reports. Each stage's output is persisted before the next.
inline RunResult cmd_mine(const MineArgs& args, const RunOptions& opt) {
  std::unique_ptr<EmotionTaxonomy> holder;
  const auto& tax = detail::taxonomy_of(opt, holder);
  auto target = tax.canonical_name(detail::trim(args.emotion));
  if (!target) throw Error(ErrorKind::kNotInTaxonomy, "'" + args.emotion + "' is not in the taxonomy");
  args.cluster.validate();

  detail::ManifestWriter mw("mine", opt, to_json(args));
  std::string stage = "fetch";
  try {
    std::vector<Utterance> comments;
    if (args.comments) {
      mw.input("comments", *args.comments);
      comments = load_jsonl(*args.comments, {true, &tax});
      if (!args.since.empty() && !args.until.empty()) {
        auto since = parse_timestamp(args.since), until = parse_timestamp(args.until);
        std::erase_if(comments, [&](const Utterance& u) {
          auto t = u.created_time();
          return t && (*t < since || !(*t < until));
        });
      }
    } else {
      auto w = detail::make_window(args.repo, args.since, args.until, args.kinds);
      std::shared_ptr<GitHubClient> gh;
      comments = detail::github_of(opt, gh).fetch_comments(w, mw.path("fetch.checkpoint.json"));
      mw.record_output("checkpoint", "fetch.checkpoint.json");
    }
    save_jsonl(comments, mw.path("comments.jsonl"));
    mw.record_output("comments", "comments.jsonl");

    stage = "filter";
    auto kept = filter_by_association(comments, std::set<std::string>(args.exclude_associations.begin(), args.exclude_associations.end()));
    save_jsonl(kept, mw.path("filtered.jsonl"));
    mw.record_output("filtered", "filtered.jsonl");

    stage = "classify";
    auto gw = detail::make_gateway(opt, mw);
    auto preds = classify_items(tax, gw, kept, args.variant, Platform::kGitHub, opt.parallelism, {*target});
    std::vector<ojson> pred_rows;
    std::vector<Utterance> selected;
    std::size_t classify_errors = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      pred_rows.push_back(to_json(preds[i], opt.model.model_name));
      if (preds[i].error) ++classify_errors;
      if (preds[i].resolution && preds[i].resolution->is_matched() && preds[i].resolution->label == *target) {
        selected.push_back(kept[i]);
      }
    }
    mw.output_jsonl("predictions", "predictions.jsonl", pred_rows);
    save_jsonl(selected, mw.path("selected.jsonl"));
    mw.record_output("selected", "selected.jsonl");

    stage = "extract";
    std::vector<CauseRequest> requests;
    for (std::size_t i = 0; i < selected.size(); ++i) {
      std::vector<ChatMessage> ctx;
      if (opt.conversation == ConversationMode::kShared) {
        auto it = std::find_if(preds.begin(), preds.end(), [&](const Prediction& p) { return p.id == selected[i].id; });
        auto first = render_classification_prompt(tax, PromptVariant::classification(Platform::kGitHub, args.variant),
                                                  selected[i].text, selected[i].id);
        ctx = {ChatMessage{"user", first.text}, ChatMessage{"assistant", it->raw_response}};
      }
      requests.push_back({&selected[i], *target, std::move(ctx)});
    }
    auto causes = extract_items(tax, gw, requests, opt.parallelism);
    std::vector<ojson> cause_rows;
    for (const auto& c : causes) cause_rows.push_back(to_json(c, opt.model.model_name));
    mw.output_jsonl("causes", "causes.jsonl", cause_rows);

    stage = "embed";
    std::vector<std::string> ids, texts;
    std::map<std::string, std::string> text_of;
    std::size_t skipped = 0;
    for (const auto& c : causes) {
      std::string t = c.parsed ? detail::collapse_whitespace(strip_markup(c.parsed->span)) : std::string();
      if (detail::trim_view(t).empty()) {
        ++skipped;
        continue;
      }
      ids.push_back(c.id);
      texts.push_back(t);
      text_of[c.id] = t;
    }
    auto embedder = detail::make_embedder(opt);
    auto embedded = embedder->embed(texts);
    std::vector<EmbeddingVector> points;
    std::vector<std::string> point_ids, point_texts;
    std::vector<ojson> emb_rows;
    for (std::size_t i = 0; i < embedded.size(); ++i) {
      if (!embedded[i].ok()) {
        ++skipped;
        mw.warn("embedding failed for " + ids[i] + ": " + embedded[i].error->what());
        continue;
      }
      ojson row;
      row["id"] = ids[i];
      row["text"] = texts[i];
      row["vector"] = *embedded[i].vector;
      emb_rows.push_back(std::move(row));
      points.push_back(*embedded[i].vector);
      point_ids.push_back(ids[i]);
      point_texts.push_back(texts[i]);
    }
    mw.output_jsonl("embeddings", "embeddings.jsonl", emb_rows);

    stage = "cluster";
    auto result = dbscan(points, args.cluster);
    std::vector<ojson> assign_rows;
    for (std::size_t i = 0; i < points.size(); ++i) {
      assign_rows.push_back({{"id", point_ids[i]}, {"cluster", result.assignment[i]}, {"core", bool(result.core[i])}});
    }
    mw.output_jsonl("clusters", "clusters.jsonl", assign_rows);
    auto summaries = summarize_clusters(result, point_texts, points, point_ids, args.top_terms);

    stage = "report";
    auto title = *target + " causes: eps=" + detail::format_fixed(args.cluster.eps, 2) +
                 ", min_pts=" + std::to_string(args.cluster.min_pts);
    ojson sj;
    sj["title"] = title;
    sj["emotion"] = *target;
    sj["eps"] = args.cluster.eps;
    sj["min_pts"] = args.cluster.min_pts;
    sj["clusters"] = result.k;
    sj["noise"] = result.noise_count();
    sj["summaries"] = ojson::array();
    for (const auto& s : summaries) sj["summaries"].push_back(to_json(s));
    sj["texts"] = text_of;
    mw.output("cluster_summary", "cluster_summary.json", sj.dump(2) + "\n");
    mw.output("cluster_report", "cluster_report.md", format_cluster_markdown(summaries, text_of, result.noise_count(), title));
    mw.output("cluster_tsv", "cluster_report.tsv", format_cluster_tsv(summaries));
    auto cells = sweep(points, default_eps_grid(), default_min_pts_grid());
    mw.output("sweep", "sweep.tsv", format_sweep_tsv(cells));

    auto& s = mw.summary();
    s["fetched"] = comments.size();
    s["after_filter"] = kept.size();
    s["classify_errors"] = classify_errors;
    s["selected"] = selected.size();
    s["embedded"] = points.size();
    s["skipped"] = skipped;
    s["clusters"] = result.k;
    s["noise"] = result.noise_count();
    if (selected.empty()) mw.warn("no comment was classified as " + *target);
    return mw.finish();
  } catch (const std::exception& e) {
    mw.fail(stage, e);
    throw;
  }
}

// ---------------------------------------------------------------------------
// sweep

struct LabeledPoints {
  std::vector<std::string> ids;
  std::vector<EmbeddingVector> points;
};

/// Reads vectors from a TSV (header names an "id" column and numeric columns
/// v0, v1, ...; lines starting with '#' are skipped when no header was seen
/// yet) or an embeddings JSONL with "id" and "vector".
inline LabeledPoints load_vectors(const fs::path& path) {
  LabeledPoints out;
  if (path.extension() == ".jsonl") {
    for (const auto& row : detail::read_jsonl(path)) {
      if (!row.contains("vector")) throw Error(ErrorKind::kValidation, path.string() + ": row without \"vector\"");
      out.ids.push_back(row.value("id", std::to_string(out.ids.size())));
      out.points.push_back(row["vector"].get<EmbeddingVector>());
    }
  } else {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::kNotFound, "cannot read " + path.string());
    std::string line;
    std::vector<std::string> header;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (detail::trim_view(line).empty() || line[0] == '#') continue;
      auto cols = detail::split(line, '\t');
      bool numeric = !cols.empty();
      char* end = nullptr;
      if (header.empty() && cols.size() > 1) {
        std::strtod(cols.back().c_str(), &end);
        numeric = end && *end == '\0' && end != cols.back().c_str();
        if (!numeric) {
          header = cols;
          continue;
        }
      }
      EmbeddingVector v;
      std::string id = std::to_string(out.ids.size());
      for (std::size_t c = 0; c < cols.size(); ++c) {
        const std::string name = c < header.size() ? header[c] : "";
        if (name == "id") {
          id = cols[c];
          continue;
        }
        bool vector_col = header.empty() || (name.size() > 1 && name[0] == 'v' &&
                                             std::all_of(name.begin() + 1, name.end(), ::isdigit));
        if (!vector_col) continue;
        double x = std::strtod(cols[c].c_str(), &end);
        bool ok = end != cols[c].c_str() && *end == '\0';
        if (!ok && header.empty() && v.empty()) {
          // Headerless: leading text columns are the id and labels.
          if (c == 0) id = cols[c];
          continue;
        }
        if (!ok) {
          throw Error(ErrorKind::kValidation, path.string() + ":" + std::to_string(n) + ": not a number '" + cols[c] + "'");
        }
        v.push_back(x);
      }
      if (!out.points.empty() && v.size() != out.points.front().size()) {
        throw Error(ErrorKind::kValidation, path.string() + ":" + std::to_string(n) + ": dimension mismatch");
      }
      out.ids.push_back(id);
      out.points.push_back(std::move(v));
    }
  }
  for (const auto& p : out.points) validate_embedding(p);
  return out;
}

inline RunResult cmd_sweep(const SweepArgs& args, const RunOptions& opt) {
  detail::ManifestWriter mw("sweep", opt, to_json(args));
  try {
    mw.input("input", args.input);
    LabeledPoints pts;
    std::string head;
    {
      std::ifstream probe(args.input);
      std::getline(probe, head);
    }
    bool is_dataset = args.input.extension() == ".jsonl" && head.find("\"text\"") != std::string::npos &&
                      head.find("\"vector\"") == std::string::npos;
    if (is_dataset) {
      auto items = load_jsonl(args.input, {false, nullptr});
      std::vector<std::string> texts;
      for (const auto& u : items) {
        pts.ids.push_back(u.id);
        texts.push_back(detail::collapse_whitespace(strip_markup(u.text)));
      }
      auto res = detail::make_embedder(opt)->embed(texts);
      std::vector<std::string> ids;
      for (std::size_t i = 0; i < res.size(); ++i) {
        if (!res[i].ok()) {
          mw.warn("embedding failed for " + pts.ids[i] + ": " + res[i].error->what());
          continue;
        }
        ids.push_back(pts.ids[i]);
        pts.points.push_back(*res[i].vector);
      }
      pts.ids = std::move(ids);
    } else {
      pts = load_vectors(args.input);
    }
    auto cells = sweep(pts.points, args.eps, args.min_pts);
    ojson cj = ojson::array();
    for (const auto& c : cells) {
      cj.push_back({{"eps", c.eps}, {"min_pts", c.min_pts}, {"clusters", c.k}, {"noise", c.noise},
                    {"mean_size", c.mean_size}, {"largest", c.largest}});
    }
    auto* cell = find_cell(cells, args.report_cell.eps, args.report_cell.min_pts);
    ojson j = {{"points", pts.points.size()}, {"cells", cj}};
    if (cell) {
      j["selected"] = {{"eps", cell->eps}, {"min_pts", cell->min_pts}, {"clusters", cell->k}, {"noise", cell->noise}};
    } else {
      auto r = dbscan(pts.points, args.report_cell);
      j["selected"] = {{"eps", args.report_cell.eps}, {"min_pts", args.report_cell.min_pts}, {"clusters", r.k},
                       {"noise", r.noise_count()}};
    }
    mw.output("sweep_json", "sweep.json", j.dump(2) + "\n");
    mw.output("sweep_tsv", "sweep.tsv", format_sweep_tsv(cells));
    mw.output("sweep_markdown", "sweep.md", format_sweep_markdown(cells));
    mw.summary() = {{"points", pts.points.size()}, {"selected", j["selected"]}};
    return mw.finish();
  } catch (const std::exception& e) {
    mw.fail("sweep", e);
    throw;
  }
}

// ---------------------------------------------------------------------------
// import and split

inline RunResult cmd_import(const ImportArgs& args, const RunOptions& opt) {
  detail::ManifestWriter mw("import", opt, to_json(args));
  try {
    mw.input("csv", args.csv);
    std::ifstream in(args.csv, std::ios::binary);
    if (!in) throw Error(ErrorKind::kNotFound, "cannot read " + args.csv.string());
    auto items = import_csv(in, args.spec);
    save_jsonl(items, mw.path("dataset.jsonl"));
    mw.record_output("dataset", "dataset.jsonl");
    mw.summary() = {{"items", items.size()}};
    return mw.finish();
  } catch (const std::exception& e) {
    mw.fail("import", e);
    throw;
  }
}

inline RunResult cmd_split(const SplitArgs& args, const RunOptions& opt) {
  detail::ManifestWriter mw("split", opt, to_json(args));
  try {
    std::unique_ptr<EmotionTaxonomy> holder;
    mw.input("dataset", args.dataset);
    auto items = load_jsonl(args.dataset);
    StratumFn fn = primary_stratum;
    if (args.basic_strata) fn = basic_stratum(detail::taxonomy_of(opt, holder));
    auto s = stratified_split(items, args.ratio, opt.seed, fn);
    save_jsonl(s.train, mw.path("train.jsonl"));
    save_jsonl(s.test, mw.path("test.jsonl"));
    mw.record_output("train", "train.jsonl");
    mw.record_output("test", "test.jsonl");
    std::map<std::string, std::array<std::size_t, 2>> per;
    for (const auto& u : s.train) ++per[fn(u)][0];
    for (const auto& u : s.test) ++per[fn(u)][1];
    ojson strata = ojson::object();
    for (const auto& [k, v] : per) strata[k] = {{"train", v[0]}, {"test", v[1]}};
    mw.summary() = {{"train", s.train.size()}, {"test", s.test.size()}, {"strata", strata}};
    return mw.finish();
  } catch (const std::exception& e) {
    mw.fail("split", e);
    throw;
  }
}

// ---------------------------------------------------------------------------
// report and rerun

struct RenderedReport {
  std::string markdown;
  std::string tsv;
};

inline ojson load_manifest(const fs::path& path) {
  auto p = fs::is_directory(path) ? path / std::string(kManifestName) : path;
  try {
    return ojson::parse(detail::read_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kValidation, "manifest " + p.string() + " is not valid JSON: " + e.what());
  }
}

namespace detail {

inline fs::path artifact(const fs::path& run_dir, const ojson& m, const std::string& name) {
  if (!m["outputs"].contains(name)) throw Error(ErrorKind::kNotFound, "manifest lists no '" + name + "' output");
  auto p = run_dir / m["outputs"][name].get<std::string>();
  if (!fs::exists(p)) throw Error(ErrorKind::kNotFound, "missing artifact " + p.string());
  return p;
}

inline ojson read_json(const fs::path& p) { return ojson::parse(read_file(p)); }

inline EvalReport eval_report_from_json(const ojson& j) {
  EvalReport r;
  r.items = j.at("items").get<std::size_t>();
  r.neutral = j.value("neutral_pooled", false) ? NeutralPooling::kInclude : NeutralPooling::kExclude;
  for (const auto& row : j.at("per_class")) {
    auto label = EmotionLabel::parse(row.at("class").get<std::string>());
    if (!label) throw Error(ErrorKind::kValidation, "unknown class in report: " + row.at("class").dump());
    ClassCounts c{row.at("tp").get<std::size_t>(), row.at("fp").get<std::size_t>(), row.at("fn").get<std::size_t>()};
    r.counts[*label] = c;
    r.per_class[*label] = ClassScores::from_counts(c);
    r.pooled += c;
  }
  r.micro = ClassScores::from_counts(r.pooled);
  return r;
}

inline BleuReport bleu_report_from_json(const ojson& j) {
  BleuReport r;
  for (int n = 1; j.contains("bleu_" + std::to_string(n)); ++n) r.score.push_back(j["bleu_" + std::to_string(n)].get<double>());
  for (int n = 1; j.contains("p_" + std::to_string(n)); ++n) r.precision.push_back(j["p_" + std::to_string(n)].get<double>());
  r.matched = j.value("matched", std::vector<std::size_t>{});
  r.total = j.value("total", std::vector<std::size_t>{});
  r.bp = j.value("bp", 0.0);
  r.bp_defined = j.value("bp_defined", false);
  r.candidate_len = j.value("candidate_len", std::size_t{0});
  r.reference_len = j.value("reference_len", std::size_t{0});
  return r;
}

inline LengthStats lengths_from_json(const ojson& j) {
  return {j.at("mean_utterance_tokens").get<double>(), j.at("mean_gold_span_tokens").get<double>(),
          j.at("mean_extracted_span_tokens").get<double>()};
}

inline std::string counts_markdown(const std::string& title, const std::map<std::string, std::size_t>& counts) {
  std::string md = "| " + title + " | Count |\n|---|---|\n";
  for (const auto& [k, v] : counts) md += "| " + md_cell(k) + " | " + std::to_string(v) + " |\n";
  return md;
}

inline std::string counts_tsv(const std::string& title, const std::map<std::string, std::size_t>& counts) {
  std::string t = title + "\tcount\n";
  for (const auto& [k, v] : counts) t += tsv_cell(k) + "\t" + std::to_string(v) + "\n";
  return t;
}

}  // namespace detail

/// Tables for a finished run, rebuilt from its artifacts.
inline RenderedReport cmd_report(const fs::path& manifest_path) {
  auto m = load_manifest(manifest_path);
  auto dir = fs::is_directory(manifest_path) ? manifest_path : manifest_path.parent_path();
  if (dir.empty()) dir = ".";
  const auto command = m.at("command").get<std::string>();
  if (m.value("status", "") != "ok") {
    throw Error(ErrorKind::kInvalidInput, "run did not finish (status " + m.value("status", "?") + ", stage " +
                                              m.value("failed_stage", "?") + ")");
  }
  RenderedReport out;
  if (command == "evaluate") {
    auto j = detail::read_json(detail::artifact(dir, m, "report"));
    auto model = j.value("model", "model");
    if (j.at("mode") == "f1") {
      auto r = detail::eval_report_from_json(j.at("report"));
      out.markdown = format_eval_markdown(r, model);
      out.tsv = format_eval_tsv(r);
    } else {
      auto r = detail::bleu_report_from_json(j.at("report"));
      auto l = detail::lengths_from_json(j.at("lengths"));
      out.markdown = format_bleu_markdown(r, model) + "\n" + format_length_markdown(l);
      out.tsv = format_bleu_tsv(r, model) + "\n" + format_length_tsv(l);
    }
  } else if (command == "mine") {
    auto j = detail::read_json(detail::artifact(dir, m, "cluster_summary"));
    std::vector<ClusterSummary> summaries;
    for (const auto& s : j.at("summaries")) {
      ClusterSummary c;
      c.cluster_id = s.at("cluster").get<int>();
      c.size = s.at("size").get<std::size_t>();
      for (const auto& t : s.at("top_terms")) c.top_terms.emplace_back(t.at(0).get<std::string>(), t.at(1).get<std::size_t>());
      c.exemplar_ids = s.at("exemplar_ids").get<std::vector<std::string>>();
      summaries.push_back(std::move(c));
    }
    auto text_of = j.at("texts").get<std::map<std::string, std::string>>();
    out.markdown = format_cluster_markdown(summaries, text_of, j.at("noise").get<std::size_t>(), j.at("title").get<std::string>());
    out.tsv = format_cluster_tsv(summaries);
  } else if (command == "sweep") {
    auto j = detail::read_json(detail::artifact(dir, m, "sweep_json"));
    std::vector<SweepCell> cells;
    for (const auto& c : j.at("cells")) {
      cells.push_back({c.at("eps").get<double>(), c.at("min_pts").get<int>(), c.at("clusters").get<int>(),
                       c.at("noise").get<std::size_t>(), c.at("mean_size").get<double>(), c.at("largest").get<std::size_t>()});
    }
    out.markdown = format_sweep_markdown(cells);
    const auto& sel = j.at("selected");
    out.markdown += "\nSelected eps=" + detail::format_fixed(sel.at("eps").get<double>(), 2) +
                    ", min_pts=" + std::to_string(sel.at("min_pts").get<int>()) + ": " +
                    std::to_string(sel.at("clusters").get<int>()) + " clusters, " +
                    std::to_string(sel.at("noise").get<std::size_t>()) + " noise points.\n";
    out.tsv = format_sweep_tsv(cells);
  } else if (command == "classify") {
    std::map<std::string, std::size_t> counts;
    for (const auto& row : detail::read_jsonl(detail::artifact(dir, m, "predictions"))) {
      ++counts[row["error"].is_null() ? row.at("label").get<std::string>() : std::string("(error)")];
    }
    out.markdown = detail::counts_markdown("Label", counts);
    out.tsv = detail::counts_tsv("label", counts);
  } else if (command == "extract-causes") {
    std::map<std::string, std::size_t> counts;
    for (const auto& row : detail::read_jsonl(detail::artifact(dir, m, "causes"))) {
      ++counts[!row["error"].is_null() ? "error" : (row.value("quoted", false) ? "quoted" : "unquoted")];
    }
    out.markdown = detail::counts_markdown("Outcome", counts);
    out.tsv = detail::counts_tsv("outcome", counts);
  } else {
    std::map<std::string, std::size_t> counts;
    for (const auto& [k, v] : m.at("summary").items()) {
      if (v.is_number_unsigned()) counts[k] = v.get<std::size_t>();
    }
    for (const auto& [name, file] : m.at("outputs").items()) detail::artifact(dir, m, name);
    out.markdown = detail::counts_markdown("Field", counts);
    out.tsv = detail::counts_tsv("field", counts);
  }
  return out;
}

/// Runs the manifest's command again with its recorded arguments. Live
/// providers are swapped for replay over the recorded fixtures.
inline RunResult rerun(const fs::path& manifest_path, RunOptions opt) {
  auto m = load_manifest(manifest_path);
  const auto& cfg = m.at("config");
  opt.model.provider_id = cfg.at("provider").get<std::string>();
  opt.model.model_name = cfg.at("model").get<std::string>();
  opt.model.temperature = cfg.at("temperature").get<double>();
  opt.model.max_output_tokens = cfg.at("max_output_tokens").get<int>();
  opt.model.max_retries = cfg.at("max_retries").get<int>();
  opt.model.base_url = cfg.at("base_url").get<std::string>();
  if (!cfg.at("fixtures").is_null()) opt.fixtures = fs::path(cfg["fixtures"].get<std::string>());
  if (opt.model.provider_id == "live" || opt.model.provider_id == "record") {
    if (!opt.fixtures && !opt.provider) {
      throw Error(ErrorKind::kConfiguration, "run used a live provider without fixtures; nothing to replay");
    }
    opt.model.provider_id = "replay";
  }
  opt.parallelism = cfg.at("parallelism").get<int>();
  opt.seed = cfg.at("seed").get<std::uint64_t>();
  opt.conversation = parse_conversation_mode(cfg.at("conversation").get<std::string>());
  opt.embedder = cfg.at("embedder").get<std::string>();
  opt.embedding_dim = cfg.at("embedding_dim").get<std::size_t>();
  opt.embedding.model_name = cfg.value("embedding_model", opt.embedding.model_name);

  const auto command = m.at("command").get<std::string>();
  const auto& a = m.at("args");
  if (command == "classify") return cmd_classify(classify_args_from_json(a), opt);
  if (command == "extract-causes") return cmd_extract_causes(extract_args_from_json(a), opt);
  if (command == "evaluate") return cmd_evaluate(evaluate_args_from_json(a), opt);
  if (command == "mine") {
    auto args = mine_args_from_json(a);
    if (!args.comments) {
      // Replay the fetched comments instead of hitting the API again.
      auto dir = fs::is_directory(manifest_path) ? manifest_path : manifest_path.parent_path();
      auto fetched = detail::artifact(dir.empty() ? fs::path(".") : dir, m, "comments");
      auto copy = opt.out_dir / "source_comments.jsonl";
      fs::create_directories(opt.out_dir);
      if (fs::absolute(fetched) != fs::absolute(copy)) fs::copy_file(fetched, copy, fs::copy_options::overwrite_existing);
      args.comments = copy;
    }
    return cmd_mine(args, opt);
  }
  if (command == "sweep") return cmd_sweep(sweep_args_from_json(a), opt);
  if (command == "import") return cmd_import(import_args_from_json(a), opt);
  if (command == "split") return cmd_split(split_args_from_json(a), opt);
  if (command == "fetch") return cmd_fetch(fetch_args_from_json(a), opt);
  throw Error(ErrorKind::kInvalidInput, "unknown command '" + command + "' in manifest");
}

}  // namespace emocause
