#pragma once

// Utterance data model, JSONL dataset I/O, GitHub comment collection,
// author-association filtering and stratified splitting.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "emocause/detail/http.hpp"
#include "emocause/detail/strings.hpp"
#include "emocause/error.hpp"
#include "emocause/prompting.hpp"
#include "emocause/sleeper.hpp"
#include "emocause/taxonomy.hpp"

namespace emocause {

using Timestamp = std::chrono::sys_seconds;

/// Accepts "YYYY-MM-DD", "YYYY-MM-DDTHH:MM:SS" with optional fractional
/// seconds and a "Z" or "+HH:MM"/"-HH:MM" suffix. Result is UTC.
inline Timestamp parse_timestamp(std::string_view s) {
  auto bad = [&] { return Error(ErrorKind::kInvalidInput, "bad timestamp '" + std::string(s) + "'"); };
  std::string str(detail::trim_view(s));
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0, consumed = 0;
  if (std::sscanf(str.c_str(), "%4d-%2d-%2d%n", &y, &mo, &d, &consumed) != 3 || consumed != 10) throw bad();
  std::size_t pos = 10;
  if (pos < str.size() && (str[pos] == 'T' || str[pos] == ' ')) {
    if (std::sscanf(str.c_str() + pos + 1, "%2d:%2d:%2d%n", &h, &mi, &sec, &consumed) != 3 || consumed != 8) {
      throw bad();
    }
    pos += 9;
    if (pos < str.size() && str[pos] == '.') {
      ++pos;
      while (pos < str.size() && std::isdigit(static_cast<unsigned char>(str[pos]))) ++pos;
    }
  }
  int offset_min = 0;
  if (pos < str.size()) {
    if (str[pos] == 'Z' && pos + 1 == str.size()) {
      ++pos;
    } else if ((str[pos] == '+' || str[pos] == '-') && str.size() - pos == 6 && str[pos + 3] == ':') {
      int oh = std::stoi(str.substr(pos + 1, 2)), om = std::stoi(str.substr(pos + 4, 2));
      offset_min = (str[pos] == '+' ? 1 : -1) * (oh * 60 + om);
      pos = str.size();
    } else {
      throw bad();
    }
  }
  using namespace std::chrono;
  year_month_day ymd{year(y), month(static_cast<unsigned>(mo)), day(static_cast<unsigned>(d))};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) throw bad();
  return sys_days(ymd) + hours(h) + minutes(mi) + seconds(sec) - minutes(offset_min);
}

inline std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  auto dp = floor<days>(t);
  year_month_day ymd(dp);
  hh_mm_ss<seconds> hms(t - dp);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

struct CauseAnnotation {
  std::string emotion;
  std::string span;
  friend bool operator==(const CauseAnnotation&, const CauseAnnotation&) = default;
};

struct Utterance {
  std::string id;
  Platform platform = Platform::kGitHub;
  std::string text;
  std::optional<std::string> author_association;
  std::optional<std::string> created_at;  // kept verbatim for round-trips
  std::vector<std::string> gold_emotions;  // annotation order; empty means Neutral
  std::vector<CauseAnnotation> gold_causes;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();  // unknown fields

  std::optional<Timestamp> created_time() const {
    if (!created_at) return std::nullopt;
    return parse_timestamp(*created_at);
  }

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

inline nlohmann::ordered_json to_json(const Utterance& u) {
  nlohmann::ordered_json j;
  j["id"] = u.id;
  j["platform"] = slug(u.platform);
  j["text"] = u.text;
  j["author_association"] = u.author_association ? nlohmann::ordered_json(*u.author_association) : nlohmann::ordered_json(nullptr);
  j["created_at"] = u.created_at ? nlohmann::ordered_json(*u.created_at) : nlohmann::ordered_json(nullptr);
  j["gold_emotions"] = u.gold_emotions;
  j["gold_causes"] = nlohmann::ordered_json::array();
  for (const auto& c : u.gold_causes) j["gold_causes"].push_back({{"emotion", c.emotion}, {"span", c.span}});
  for (const auto& [k, v] : u.extra.items()) j[k] = v;
  return j;
}

inline Utterance utterance_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kValidation, "record is not a JSON object");
  auto req_string = [&](const char* key) -> std::string {
    if (!j.contains(key)) throw Error(ErrorKind::kValidation, std::string("missing \"") + key + "\"");
    if (!j[key].is_string()) throw Error(ErrorKind::kValidation, std::string("\"") + key + "\" is not a string");
    return j[key].get<std::string>();
  };
  auto opt_string = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string()) throw Error(ErrorKind::kValidation, std::string("\"") + key + "\" is not a string");
    return j[key].get<std::string>();
  };
  Utterance u;
  u.id = req_string("id");
  if (u.id.empty()) throw Error(ErrorKind::kValidation, "empty id");
  auto platform = parse_platform(req_string("platform"));
  if (!platform) throw Error(ErrorKind::kValidation, "unknown platform in " + u.id);
  u.platform = *platform;
  u.text = req_string("text");
  if (detail::trim_view(u.text).empty()) throw Error(ErrorKind::kValidation, "empty text in " + u.id);
  u.author_association = opt_string("author_association");
  u.created_at = opt_string("created_at");
  if (u.created_at) parse_timestamp(*u.created_at);
  if (j.contains("gold_emotions") && !j["gold_emotions"].is_null()) {
    for (const auto& e : j["gold_emotions"]) {
      if (!e.is_string()) throw Error(ErrorKind::kValidation, "gold_emotions must be strings in " + u.id);
      u.gold_emotions.push_back(e.get<std::string>());
    }
  }
  if (j.contains("gold_causes") && !j["gold_causes"].is_null()) {
    for (const auto& c : j["gold_causes"]) {
      if (!c.is_object() || !c.contains("emotion") || !c.contains("span") || !c["emotion"].is_string() ||
          !c["span"].is_string()) {
        throw Error(ErrorKind::kValidation, "gold_causes entries need string emotion and span in " + u.id);
      }
      u.gold_causes.push_back({c["emotion"].get<std::string>(), c["span"].get<std::string>()});
    }
  }
  static const std::set<std::string> kKnown = {"id",         "platform",      "text",       "author_association",
                                               "created_at", "gold_emotions", "gold_causes"};
  for (const auto& [k, v] : j.items()) {
    if (!kKnown.contains(k)) u.extra[k] = v;
  }
  return u;
}

/// Problems that make a dataset unusable as gold data: duplicate ids, empty
/// text, labels outside the taxonomy, and cause spans that (after whitespace
/// collapsing) are not substrings of the text. One message per problem.
inline std::vector<std::string> validate_dataset(std::span<const Utterance> items,
                                                 const EmotionTaxonomy* taxonomy = nullptr) {
  std::vector<std::string> issues;
  std::unordered_set<std::string> ids;
  for (const auto& u : items) {
    if (!ids.insert(u.id).second) issues.push_back("duplicate id " + u.id);
    if (detail::trim_view(u.text).empty()) issues.push_back("empty text in " + u.id);
    auto text = detail::collapse_whitespace(u.text);
    for (const auto& c : u.gold_causes) {
      auto span = detail::collapse_whitespace(c.span);
      if (span.empty() || text.find(span) == std::string::npos) {
        issues.push_back("cause span not found in text of " + u.id + ": \"" + c.span + "\"");
      }
      if (taxonomy && !taxonomy->contains(c.emotion)) {
        issues.push_back("cause emotion '" + c.emotion + "' of " + u.id + " is not in the taxonomy");
      }
    }
    if (taxonomy) {
      for (const auto& e : u.gold_emotions) {
        if (!taxonomy->contains(e) && !detail::iequals(e, kNeutral)) {
          issues.push_back("gold emotion '" + e + "' of " + u.id + " is not in the taxonomy");
        }
      }
    }
  }
  return issues;
}

struct LoadOptions {
  bool validate_gold = true;
  const EmotionTaxonomy* taxonomy = nullptr;
};

/// Malformed lines fail with their line number; validation problems fail
/// with every offending id listed.
inline std::vector<Utterance> load_jsonl(const std::filesystem::path& path, const LoadOptions& options = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<Utterance> items;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim_view(line).empty()) continue;
    auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    try {
      auto u = utterance_from_json(nlohmann::ordered_json::parse(line));
      if (!ids.insert(u.id).second) throw Error(ErrorKind::kValidation, "duplicate id " + u.id);
      items.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kValidation, where + "malformed JSON: " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorKind::kValidation, where + e.what());
    }
  }
  if (options.validate_gold) {
    auto issues = validate_dataset(items, options.taxonomy);
    if (!issues.empty()) {
      throw Error(ErrorKind::kValidation, path.string() + ": " + detail::join(issues, "; "));
    }
  }
  return items;
}

inline void save_jsonl(std::span<const Utterance> items, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& u : items) out << to_json(u).dump() << '\n';
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Author association

/// Order-preserving. Comparison is case-insensitive; items without the
/// field are dropped when NONE is excluded.
inline std::vector<Utterance> filter_by_association(std::span<const Utterance> items,
                                                    const std::set<std::string>& exclude) {
  std::set<std::string> ex;
  for (const auto& e : exclude) ex.insert(detail::ascii_lower(e));
  const bool none_excluded = ex.contains("none");
  std::vector<Utterance> out;
  for (const auto& u : items) {
    if (!u.author_association) {
      if (!none_excluded) out.push_back(u);
      continue;
    }
    if (!ex.contains(detail::ascii_lower(*u.author_association))) out.push_back(u);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stratified split

namespace detail {

// Uniform integer in [0, bound) by rejection, identical on every platform
// (std::uniform_int_distribution is implementation-defined).
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  for (;;) {
    std::uint64_t x = rng();
    if (x < limit) return x % bound;
  }
}

template <class T>
void portable_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace detail

/// Stratum of an item: its first gold emotion, or Neutral.
inline std::string primary_stratum(const Utterance& u) {
  return u.gold_emotions.empty() ? std::string(kNeutral) : u.gold_emotions.front();
}

struct Split {
  std::vector<Utterance> train;
  std::vector<Utterance> test;
};

using StratumFn = std::function<std::string(const Utterance&)>;

/// round(ratio * |stratum|) items of each stratum go to train (halves round
/// away from zero), chosen by a seeded shuffle; the rest go to test. A
/// stratum with one item always goes to train. Both halves keep input order.
inline Split stratified_split(std::span<const Utterance> items, double ratio, std::uint64_t seed,
                              const StratumFn& stratum = primary_stratum) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorKind::kInvalidInput, "ratio must be in (0, 1)");
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto key = stratum(items[i]);
    auto [it, inserted] = members.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<bool> to_train(items.size(), false);
  for (const auto& key : order) {
    auto idx = members[key];
    std::size_t n_train = idx.size() == 1 ? 1 : static_cast<std::size_t>(std::round(ratio * double(idx.size())));
    detail::portable_shuffle(idx, rng);
    for (std::size_t k = 0; k < n_train; ++k) to_train[idx[k]] = true;
  }
  Split s;
  for (std::size_t i = 0; i < items.size(); ++i) (to_train[i] ? s.train : s.test).push_back(items[i]);
  return s;
}

/// Stratum function that maps the first gold label to its basic emotion.
inline StratumFn basic_stratum(const EmotionTaxonomy& taxonomy) {
  return [&taxonomy](const Utterance& u) -> std::string {
    if (u.gold_emotions.empty() || detail::iequals(u.gold_emotions.front(), kNeutral)) return std::string(kNeutral);
    return std::string(to_string(taxonomy.map_to_basic(u.gold_emotions.front())));
  };
}

// ---------------------------------------------------------------------------
// CSV import

namespace detail {

/// RFC 4180 records: quoted fields, doubled quotes, embedded newlines.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in, char sep = ',') {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == sep) {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && in.peek() == '\n') in.get();
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw Error(ErrorKind::kValidation, "unterminated quoted CSV field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

struct CsvImportSpec {
  Platform platform = Platform::kGitHub;
  std::string text_column = "text";
  std::string id_column;  // empty: "<platform>-<row number>"
  // Either one column holding a label (or '|'-separated labels) ...
  std::string label_column;
  // ... or one 0/1 column per emotion, named after the emotion.
  std::vector<std::string> flag_columns;
  char separator = ',';
};

/// Converts a published CSV dataset into utterances. Unused columns are kept
/// as extra fields.
inline std::vector<Utterance> import_csv(std::istream& in, const CsvImportSpec& spec) {
  auto rows = detail::parse_csv(in, spec.separator);
  if (rows.empty()) return {};
  const auto& header = rows.front();
  auto col = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (detail::iequals(detail::trim(header[i]), name)) return i;
    }
    throw Error(ErrorKind::kValidation, "CSV has no column '" + name + "'");
  };
  std::size_t text_col = col(spec.text_column);
  std::optional<std::size_t> id_col, label_col;
  if (!spec.id_column.empty()) id_col = col(spec.id_column);
  if (!spec.label_column.empty()) label_col = col(spec.label_column);
  std::vector<std::pair<std::string, std::size_t>> flags;
  for (const auto& f : spec.flag_columns) flags.emplace_back(f, col(f));

  std::vector<Utterance> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && detail::trim_view(row[0]).empty()) continue;
    if (row.size() != header.size()) {
      throw Error(ErrorKind::kValidation, "CSV row " + std::to_string(r + 1) + " has " +
                                              std::to_string(row.size()) + " fields, header has " +
                                              std::to_string(header.size()));
    }
    Utterance u;
    u.platform = spec.platform;
    u.id = id_col ? row[*id_col] : std::string(slug(spec.platform)) + "-" + std::to_string(r);
    u.text = row[text_col];
    if (label_col) {
      for (const auto& l : detail::split(row[*label_col], '|')) {
        auto t = detail::trim(l);
        if (!t.empty() && !detail::iequals(t, kNeutral)) u.gold_emotions.push_back(t);
      }
    }
    for (const auto& [name, idx] : flags) {
      auto v = detail::trim(row[idx]);
      if (v == "1" || detail::iequals(v, "true")) u.gold_emotions.push_back(name);
    }
    for (std::size_t i = 0; i < header.size(); ++i) {
      bool used = i == text_col || (id_col && i == *id_col) || (label_col && i == *label_col) ||
                  std::any_of(flags.begin(), flags.end(), [&](const auto& f) { return f.second == i; });
      if (!used) u.extra[detail::trim(header[i])] = row[i];
    }
    out.push_back(std::move(u));
  }
  return out;
}

// ---------------------------------------------------------------------------
// GitHub comments

enum class CommentKind : std::uint8_t { kIssueComments, kPrComments };

constexpr std::string_view to_string(CommentKind k) {
  return k == CommentKind::kIssueComments ? "issue_comments" : "pr_comments";
}

struct RepoWindow {
  std::string repo;  // owner/name
  Timestamp since;
  Timestamp until;
  std::vector<CommentKind> kinds = {CommentKind::kIssueComments, CommentKind::kPrComments};

  void validate() const {
    auto slash = repo.find('/');
    if (slash == std::string::npos || slash == 0 || slash + 1 == repo.size() ||
        repo.find('/', slash + 1) != std::string::npos) {
      throw Error(ErrorKind::kInvalidInput, "repo must be owner/name, got '" + repo + "'");
    }
    if (!(since < until)) throw Error(ErrorKind::kInvalidInput, "window needs since < until");
    if (kinds.empty()) throw Error(ErrorKind::kInvalidInput, "no comment kinds selected");
  }
};

struct GitHubConfig {
  std::string base_url = "https://api.github.com";
  std::string token_env = "GITHUB_TOKEN";
  std::string token;  // overrides the environment when set
  int per_page = 100;
  int max_retries = 5;
  std::chrono::milliseconds request_timeout{30'000};
  std::chrono::milliseconds max_wait{std::chrono::minutes(65)};
};

namespace detail {

/// URL of rel="next" in a Link header, or empty.
inline std::string next_link(const std::string& link) {
  for (const auto& part : split(link, ',')) {
    auto lt = part.find('<'), gt = part.find('>');
    if (lt == std::string::npos || gt == std::string::npos || gt < lt) continue;
    if (part.find("rel=\"next\"", gt) != std::string::npos) return part.substr(lt + 1, gt - lt - 1);
  }
  return {};
}

inline std::string path_of(const std::string& url, const BaseUrl& base) {
  if (starts_with(url, base.origin)) return url.substr(base.origin.size());
  auto scheme = url.find("://");
  if (scheme == std::string::npos) return url;
  auto slash = url.find('/', scheme + 3);
  return slash == std::string::npos ? "/" : url.substr(slash);
}

}  // namespace detail

/// Paginated GitHub REST client for issue and pull-request review comments.
/// Progress is written to an optional checkpoint file after every page so an
/// interrupted fetch resumes where it stopped.
class GitHubClient {
 public:
  explicit GitHubClient(GitHubConfig config = {}, Sleeper sleeper = real_sleeper(),
                        std::function<Timestamp()> clock = [] {
                          return std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
                        })
      : config_(std::move(config)), sleeper_(std::move(sleeper)), clock_(std::move(clock)) {}

  std::vector<Utterance> fetch_comments(const RepoWindow& window,
                                        const std::optional<std::filesystem::path>& checkpoint = std::nullopt) {
    window.validate();
    auto base = detail::BaseUrl::parse(config_.base_url);
    State st = load_checkpoint(window, checkpoint);
    if (!st.done) {
      for (std::size_t k = st.kind_index; k < window.kinds.size(); ++k) {
        auto kind = window.kinds[k];
        std::string path = st.kind_index == k && !st.next.empty() ? st.next : first_page(window, kind, base);
        st.kind_index = k;
        while (!path.empty()) {
          auto res = get_with_retries(base, path, window.repo);
          auto page = parse_page(res.body, kind, window);
          for (auto& u : page) st.items.push_back(std::move(u));
          auto next = detail::next_link(res.header("Link"));
          path = next.empty() ? std::string() : detail::path_of(next, base);
          st.next = path;
          save_checkpoint(window, checkpoint, st);
        }
        st.next.clear();
        st.kind_index = k + 1;
      }
      st.done = true;
      save_checkpoint(window, checkpoint, st);
    }
    return finalize(std::move(st.items));
  }

 private:
  struct State {
    std::size_t kind_index = 0;
    std::string next;
    bool done = false;
    std::vector<Utterance> items;
  };

  std::string first_page(const RepoWindow& w, CommentKind kind, const detail::BaseUrl& base) const {
    std::string p = base.path("/repos/" + w.repo + (kind == CommentKind::kIssueComments ? "/issues" : "/pulls") +
                              "/comments");
    p += "?sort=created&direction=asc&per_page=" + std::to_string(config_.per_page) +
         "&since=" + format_timestamp(w.since);
    return p;
  }

  detail::HttpResponse get_with_retries(const detail::BaseUrl& base, const std::string& path,
                                        const std::string& repo) {
    auto token = config_.token.empty() ? detail::env_or_empty(config_.token_env) : config_.token;
    httplib::Headers headers = {{"Accept", "application/vnd.github+json"},
                                {"X-GitHub-Api-Version", "2022-11-28"},
                                {"User-Agent", "emocause"}};
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    std::chrono::milliseconds backoff(1000);
    for (int attempt = 0;; ++attempt) {
      detail::HttpResponse res;
      try {
        res = detail::get(base, path, headers, config_.request_timeout);
      } catch (const Error& e) {
        if (!e.transient() || attempt >= config_.max_retries) throw;
        sleeper_(backoff);
        backoff *= 2;
        continue;
      }
      if (res.status >= 200 && res.status < 300) return res;
      bool limited = res.status == 429 ||
                     (res.status == 403 && (res.header("X-RateLimit-Remaining") == "0" ||
                                            !res.header("Retry-After").empty()));
      if (limited) {
        if (attempt >= config_.max_retries) {
          throw Error(ErrorKind::kRateLimited, "GitHub rate limit persisted for " + path, res.status);
        }
        sleeper_(rate_limit_wait(res));
        continue;
      }
      if (res.status == 404) throw Error(ErrorKind::kNotFound, "repository " + repo + " not found", 404);
      if (res.status >= 500 && attempt < config_.max_retries) {
        sleeper_(backoff);
        backoff *= 2;
        continue;
      }
      detail::throw_for_status(res, "GET " + path);
    }
  }

  std::chrono::milliseconds rate_limit_wait(const detail::HttpResponse& res) const {
    if (auto ra = detail::parse_retry_after(res)) return std::min(*ra, config_.max_wait);
    auto reset = res.header("X-RateLimit-Reset");
    if (!reset.empty()) {
      auto at = Timestamp(std::chrono::seconds(std::stoll(reset)));
      auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(at - clock_()) + std::chrono::seconds(1);
      return std::clamp(wait, std::chrono::milliseconds(1000), config_.max_wait);
    }
    return std::chrono::milliseconds(60'000);
  }

  static std::vector<Utterance> parse_page(const std::string& body, CommentKind kind, const RepoWindow& w) {
    nlohmann::ordered_json arr;
    try {
      arr = nlohmann::ordered_json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kProvider, std::string("malformed GitHub response: ") + e.what());
    }
    if (!arr.is_array()) throw Error(ErrorKind::kProvider, "GitHub response is not an array");
    std::vector<Utterance> out;
    for (const auto& c : arr) {
      if (!c.contains("id") || !c.contains("created_at")) continue;
      std::string body_text = c.value("body", nlohmann::ordered_json()).is_string() ? c["body"].get<std::string>() : "";
      if (detail::trim_view(body_text).empty()) continue;
      auto created = c["created_at"].get<std::string>();
      auto t = parse_timestamp(created);
      if (t < w.since || t >= w.until) continue;
      Utterance u;
      u.id = std::string(kind == CommentKind::kIssueComments ? "gh-ic-" : "gh-pc-") + c["id"].dump();
      u.platform = Platform::kGitHub;
      u.text = std::move(body_text);
      if (c.contains("author_association") && c["author_association"].is_string()) {
        u.author_association = c["author_association"].get<std::string>();
      }
      u.created_at = created;
      u.extra["source"] = to_string(kind);
      u.extra["repo"] = w.repo;
      if (c.contains("html_url")) u.extra["html_url"] = c["html_url"];
      if (c.contains("user") && c["user"].is_object() && c["user"].contains("login")) {
        u.extra["user"] = c["user"]["login"];
      }
      out.push_back(std::move(u));
    }
    return out;
  }

  static std::vector<Utterance> finalize(std::vector<Utterance> items) {
    std::unordered_set<std::string> seen;
    std::vector<Utterance> unique;
    for (auto& u : items) {
      if (seen.insert(u.id).second) unique.push_back(std::move(u));
    }
    std::stable_sort(unique.begin(), unique.end(), [](const Utterance& a, const Utterance& b) {
      auto ta = a.created_time(), tb = b.created_time();
      return ta != tb ? ta < tb : a.id < b.id;
    });
    return unique;
  }

  static std::string window_key(const RepoWindow& w) {
    std::string k = w.repo + "|" + format_timestamp(w.since) + "|" + format_timestamp(w.until);
    for (auto kind : w.kinds) k += "|" + std::string(to_string(kind));
    return k;
  }

  State load_checkpoint(const RepoWindow& w, const std::optional<std::filesystem::path>& path) const {
    State st;
    if (!path || !std::filesystem::exists(*path)) return st;
    std::ifstream in(*path);
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kValidation, "unreadable checkpoint " + path->string() + ": " + e.what());
    }
    if (j.value("window", std::string()) != window_key(w)) return st;  // different fetch; start over
    st.kind_index = j.value("kind_index", std::size_t{0});
    st.next = j.value("next", std::string());
    st.done = j.value("done", false);
    for (const auto& item : j["items"]) st.items.push_back(utterance_from_json(item));
    return st;
  }

  void save_checkpoint(const RepoWindow& w, const std::optional<std::filesystem::path>& path, const State& st) const {
    if (!path) return;
    nlohmann::ordered_json j;
    j["window"] = window_key(w);
    j["kind_index"] = st.kind_index;
    j["next"] = st.next;
    j["done"] = st.done;
    j["items"] = nlohmann::ordered_json::array();
    for (const auto& u : st.items) j["items"].push_back(to_json(u));
    auto tmp = *path;
    tmp += ".tmp";
    if (path->has_parent_path()) std::filesystem::create_directories(path->parent_path());
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint " + tmp.string());
      out << j.dump() << '\n';
    }
    std::filesystem::rename(tmp, *path);
  }

  GitHubConfig config_;
  Sleeper sleeper_;
  std::function<Timestamp()> clock_;
};

}  // namespace emocause
