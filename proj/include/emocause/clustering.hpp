#pragma once

// Embedding, DBSCAN over cosine distance, cluster summaries and the
// eps/min_pts sweep used to pick parameters.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "emocause/data_dir.hpp"
#include "emocause/detail/http.hpp"
#include "emocause/detail/strings.hpp"
#include "emocause/error.hpp"
#include "emocause/textprep.hpp"

namespace emocause {

using EmbeddingVector = std::vector<double>;

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Throws InvalidInput for empty, non-finite or zero-norm vectors.
inline void validate_embedding(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorKind::kInvalidInput, "embedding is empty");
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(ErrorKind::kInvalidInput, "embedding has a non-finite value");
  }
  if (norm(v) == 0.0) throw Error(ErrorKind::kInvalidInput, "embedding has zero norm");
}

/// 1 - cos(u, v), clamped to [0, 2].
inline double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error(ErrorKind::kInvalidInput, "dimension mismatch: " + std::to_string(u.size()) + " vs " +
                                              std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw Error(ErrorKind::kInvalidInput, "zero-norm vector");
  double d = 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(d, 0.0, 2.0);
}

// ---------------------------------------------------------------------------
// Embedding providers

struct EmbedResult {
  std::optional<EmbeddingVector> vector;
  std::optional<Error> error;
  bool ok() const { return vector.has_value(); }
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  /// One result per text, failures in place.
  virtual std::vector<EmbedResult> embed(std::span<const std::string> texts) = 0;
};

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Signed feature hashing of normalized content tokens into `dim` buckets,
/// unit-normalized. Same text and seed give the same vector on any machine.
class StubEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit StubEmbeddingProvider(std::size_t dim = 256, std::uint64_t seed = 7,
                                 std::shared_ptr<const std::set<std::string, std::less<>>> stopwords = nullptr)
      : dim_(dim), seed_(seed), stopwords_(std::move(stopwords)) {
    if (dim_ < 2) throw Error(ErrorKind::kConfiguration, "embedding dimension must be >= 2");
  }

  std::string id() const override { return "stub"; }
  std::size_t dimension() const { return dim_; }

  EmbeddingVector embed_one(std::string_view text) const {
    if (detail::trim_view(text).empty()) throw Error(ErrorKind::kEmptyText, "cannot embed empty text");
    auto tokens = preprocess_for_eval(text);
    if (stopwords_) {
      TokenList content;
      for (const auto& raw : tokenize(strip_markup(text))) {
        if (!stopwords_->contains(raw)) content.push_back(normalize_token(raw));
      }
      if (!content.empty()) tokens = std::move(content);
    }
    if (tokens.empty()) throw Error(ErrorKind::kEmptyText, "no tokens to embed in '" + std::string(text) + "'");
    EmbeddingVector v(dim_, 0.0);
    for (const auto& t : tokens) {
      auto h = detail::fnv1a64(t, seed_);
      v[h % dim_] += (h >> 63) ? -1.0 : 1.0;
    }
    double n = norm(v);
    if (n == 0.0) {
      // Signed collisions cancelled out; fall back to an unsigned bucket.
      v[detail::fnv1a64(tokens.front(), seed_) % dim_] = 1.0;
      n = 1.0;
    }
    for (auto& x : v) x /= n;
    return v;
  }

  std::vector<EmbedResult> embed(std::span<const std::string> texts) override {
    std::vector<EmbedResult> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
      try {
        out.push_back({embed_one(t), std::nullopt});
      } catch (const Error& e) {
        out.push_back({std::nullopt, e});
      }
    }
    return out;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::shared_ptr<const std::set<std::string, std::less<>>> stopwords_;
};

struct EmbeddingConfig {
  std::string model_name = "text-embedding-3-small";
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string api_key;  // overrides the environment when set
  std::chrono::milliseconds request_timeout{60'000};
  std::size_t batch_size = 64;
};

/// OpenAI-compatible /embeddings endpoint. Empty texts fail locally; a failed
/// request fails every item of its batch; the dimension must stay constant.
class OpenAIEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit OpenAIEmbeddingProvider(EmbeddingConfig config) : config_(std::move(config)) {
    if (config_.batch_size == 0) throw Error(ErrorKind::kConfiguration, "batch_size must be >= 1");
  }

  std::string id() const override { return "live:" + config_.model_name; }

  std::vector<EmbedResult> embed(std::span<const std::string> texts) override {
    std::vector<EmbedResult> out(texts.size());
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (detail::trim_view(texts[i]).empty()) {
        out[i].error = Error(ErrorKind::kEmptyText, "cannot embed empty text");
      } else {
        pending.push_back(i);
      }
    }
    std::optional<std::size_t> dim;
    for (std::size_t start = 0; start < pending.size(); start += config_.batch_size) {
      auto end = std::min(pending.size(), start + config_.batch_size);
      std::vector<std::size_t> batch(pending.begin() + static_cast<std::ptrdiff_t>(start),
                                     pending.begin() + static_cast<std::ptrdiff_t>(end));
      try {
        auto vectors = request(texts, batch);
        for (std::size_t k = 0; k < batch.size(); ++k) {
          auto& v = vectors[k];
          try {
            validate_embedding(v);
            if (dim && *dim != v.size()) {
              throw Error(ErrorKind::kProvider, "embedding dimension changed from " + std::to_string(*dim) +
                                                    " to " + std::to_string(v.size()));
            }
            dim = v.size();
            out[batch[k]].vector = std::move(v);
          } catch (const Error& e) {
            out[batch[k]].error = e;
          }
        }
      } catch (const Error& e) {
        for (auto i : batch) out[i].error = e;
      }
    }
    return out;
  }

 private:
  std::vector<EmbeddingVector> request(std::span<const std::string> texts, const std::vector<std::size_t>& batch) {
    auto key = config_.api_key.empty() ? detail::env_or_empty(config_.api_key_env) : config_.api_key;
    if (key.empty()) throw Error(ErrorKind::kAuth, "no API key; set " + config_.api_key_env);
    nlohmann::json body;
    body["model"] = config_.model_name;
    body["input"] = nlohmann::json::array();
    for (auto i : batch) body["input"].push_back(texts[i]);
    auto base = detail::BaseUrl::parse(config_.base_url);
    auto res = detail::post_json(base, "/embeddings", body.dump(), {{"Authorization", "Bearer " + key}},
                                 config_.request_timeout);
    if (res.status < 200 || res.status >= 300) detail::throw_for_status(res, "embeddings");
    try {
      auto j = nlohmann::json::parse(res.body);
      std::vector<EmbeddingVector> vectors(batch.size());
      std::vector<bool> seen(batch.size(), false);
      const auto& data = j.at("data");
      for (std::size_t k = 0; k < data.size(); ++k) {
        auto idx = data[k].contains("index") ? data[k]["index"].get<std::size_t>() : k;
        if (idx >= batch.size() || seen[idx]) throw Error(ErrorKind::kProvider, "bad embedding index");
        seen[idx] = true;
        vectors[idx] = data[k].at("embedding").get<EmbeddingVector>();
      }
      if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
        throw Error(ErrorKind::kProvider, "embedding response is missing items");
      }
      return vectors;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kProvider, std::string("malformed embedding response: ") + e.what(), res.status);
    }
  }

  EmbeddingConfig config_;
};

// ---------------------------------------------------------------------------
// DBSCAN

inline constexpr int kNoise = -1;

struct ClusterConfig {
  double eps = 0.3;
  int min_pts = 4;

  void validate() const {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw Error(ErrorKind::kConfiguration, "eps must be > 0");
    if (min_pts < 1) throw Error(ErrorKind::kConfiguration, "min_pts must be >= 1");
  }
};

struct ClusterResult {
  std::vector<int> assignment;  // cluster id in [0, k) or kNoise
  std::vector<bool> core;
  int k = 0;

  std::size_t noise_count() const {
    return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), kNoise));
  }
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(static_cast<std::size_t>(k), 0);
    for (int a : assignment) {
      if (a != kNoise) ++s[static_cast<std::size_t>(a)];
    }
    return s;
  }
};

/// Symmetric pairwise cosine distances, row-major n*n.
class DistanceMatrix {
 public:
  explicit DistanceMatrix(std::span<const EmbeddingVector> points) : n_(points.size()), d_(n_ * n_, 0.0) {
    for (const auto& p : points) validate_embedding(p);
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = i + 1; j < n_; ++j) {
        double v = cosine_distance(points[i], points[j]);
        d_[i * n_ + j] = v;
        d_[j * n_ + i] = v;
      }
    }
  }

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }

 private:
  std::size_t n_;
  std::vector<double> d_;
};

/// Neighbors are points at distance <= eps, the point itself included.
/// Points are visited in input order; a border point joins the first
/// cluster that reaches it.
inline ClusterResult dbscan(const DistanceMatrix& dist, const ClusterConfig& config) {
  config.validate();
  const std::size_t n = dist.size();
  ClusterResult r;
  r.assignment.assign(n, kNoise);
  r.core.assign(n, false);
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (dist(i, j) <= config.eps) neighbors[i].push_back(j);
    }
    r.core[i] = neighbors[i].size() >= static_cast<std::size_t>(config.min_pts);
  }
  std::vector<bool> visited(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (visited[i] || !r.core[i]) continue;
    const int c = r.k++;
    std::vector<std::size_t> queue = {i};
    visited[i] = true;
    r.assignment[i] = c;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      auto p = queue[head];
      if (!r.core[p]) continue;
      for (auto q : neighbors[p]) {
        if (r.assignment[q] == kNoise) r.assignment[q] = c;
        if (visited[q]) continue;
        visited[q] = true;
        if (r.core[q]) queue.push_back(q);
      }
    }
  }
  return r;
}

inline ClusterResult dbscan(std::span<const EmbeddingVector> points, const ClusterConfig& config) {
  config.validate();
  return dbscan(DistanceMatrix(points), config);
}

// ---------------------------------------------------------------------------
// Summaries and reports

using StopwordSet = std::set<std::string, std::less<>>;

inline StopwordSet load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfiguration, "cannot open stopword file " + path.string());
  StopwordSet s;
  std::string line;
  while (std::getline(in, line)) {
    auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    s.insert(detail::ascii_lower(t));
  }
  return s;
}

inline const StopwordSet& default_stopwords() {
  static const StopwordSet s = load_stopwords(data_dir() / "stopwords.txt");
  return s;
}

struct ClusterSummary {
  int cluster_id = 0;
  std::size_t size = 0;
  std::vector<std::pair<std::string, std::size_t>> top_terms;
  std::vector<std::string> exemplar_ids;
};

/// Top `k_terms` tokens per cluster (tokenize, stopwords and 1-char tokens
/// dropped; count desc, then token asc) and up to 3 members nearest the
/// centroid (distance asc, then input order). Ordered by cluster id.
inline std::vector<ClusterSummary> summarize_clusters(const ClusterResult& result,
                                                      std::span<const std::string> texts,
                                                      std::span<const EmbeddingVector> points,
                                                      std::span<const std::string> ids, std::size_t k_terms,
                                                      const StopwordSet& stopwords = default_stopwords()) {
  const auto n = result.assignment.size();
  if (texts.size() != n || points.size() != n || ids.size() != n) {
    throw Error(ErrorKind::kInvalidInput, "summaries need one text, vector and id per point");
  }
  std::vector<ClusterSummary> out;
  for (int c = 0; c < result.k; ++c) {
    ClusterSummary s;
    s.cluster_id = c;
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (result.assignment[i] == c) members.push_back(i);
    }
    s.size = members.size();

    std::map<std::string, std::size_t> counts;
    for (auto i : members) {
      for (auto& t : tokenize(strip_markup(texts[i]))) {
        if (t.size() > 1 && !stopwords.contains(t)) ++counts[t];
      }
    }
    std::vector<std::pair<std::string, std::size_t>> terms(counts.begin(), counts.end());
    std::stable_sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (terms.size() > k_terms) terms.resize(k_terms);
    s.top_terms = std::move(terms);

    if (!members.empty()) {
      EmbeddingVector centroid(points[members.front()].size(), 0.0);
      for (auto i : members) {
        for (std::size_t d = 0; d < centroid.size(); ++d) centroid[d] += points[i][d];
      }
      std::vector<std::pair<double, std::size_t>> ranked;
      if (norm(centroid) > 0.0) {
        for (auto i : members) ranked.emplace_back(cosine_distance(points[i], centroid), i);
      } else {
        for (auto i : members) ranked.emplace_back(0.0, i);
      }
      std::sort(ranked.begin(), ranked.end());
      for (std::size_t k = 0; k < ranked.size() && k < 3; ++k) s.exemplar_ids.push_back(ids[ranked[k].second]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {

inline std::string md_cell(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else if (c == '\n' || c == '\r') out += ' ';
    else out += c;
  }
  return out;
}

inline std::string tsv_cell(std::string_view s) {
  std::string out;
  for (char c : s) out += (c == '\t' || c == '\n' || c == '\r') ? ' ' : c;
  return out;
}

inline std::vector<const ClusterSummary*> by_size(const std::vector<ClusterSummary>& summaries) {
  std::vector<const ClusterSummary*> v;
  for (const auto& s : summaries) v.push_back(&s);
  std::stable_sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->size > b->size; });
  return v;
}

inline std::string terms_text(const ClusterSummary& s) {
  std::string out;
  for (const auto& [t, c] : s.top_terms) {
    if (!out.empty()) out += ", ";
    out += t + " (" + std::to_string(c) + ")";
  }
  return out;
}

}  // namespace detail

/// Cluster table in the shape of a themed-cluster report: description
/// placeholder (top terms), count and example texts, largest cluster first.
/// `text_of` maps exemplar ids to the text shown.
inline std::string format_cluster_markdown(const std::vector<ClusterSummary>& summaries,
                                           const std::map<std::string, std::string>& text_of,
                                           std::size_t noise, std::string_view title) {
  std::ostringstream os;
  os << "# " << title << "\n\n";
  os << "| Cluster | Description | Count | Examples |\n|---|---|---|---|\n";
  for (const auto* s : detail::by_size(summaries)) {
    os << "| " << s->cluster_id << " | _Theme TBD._ Top terms: " << detail::md_cell(detail::terms_text(*s)) << " | "
       << s->size << " | ";
    bool first = true;
    for (const auto& id : s->exemplar_ids) {
      if (!first) os << "<br>";
      first = false;
      auto it = text_of.find(id);
      os << detail::md_cell(id) << ": \"" << detail::md_cell(it == text_of.end() ? "" : it->second) << "\"";
    }
    os << " |\n";
  }
  os << "\nClusters: " << summaries.size() << ". Noise points: " << noise << ".\n";
  return os.str();
}

inline std::string format_cluster_tsv(const std::vector<ClusterSummary>& summaries) {
  std::ostringstream os;
  os << "cluster\tsize\ttop_terms\texemplar_ids\n";
  for (const auto* s : detail::by_size(summaries)) {
    os << s->cluster_id << '\t' << s->size << '\t' << detail::tsv_cell(detail::terms_text(*s)) << '\t'
       << detail::tsv_cell(detail::join(s->exemplar_ids, ",")) << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json to_json(const ClusterSummary& s) {
  nlohmann::ordered_json j;
  j["cluster"] = s.cluster_id;
  j["size"] = s.size;
  j["top_terms"] = nlohmann::ordered_json::array();
  for (const auto& [t, c] : s.top_terms) j["top_terms"].push_back({t, c});
  j["exemplar_ids"] = s.exemplar_ids;
  return j;
}

// ---------------------------------------------------------------------------
// Parameter sweep

struct SweepCell {
  double eps = 0.0;
  int min_pts = 0;
  int k = 0;
  std::size_t noise = 0;
  double mean_size = 0.0;
  std::size_t largest = 0;
};

/// eps from 0.10 to 0.80 in steps of 0.05.
inline std::vector<double> default_eps_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 14; ++i) g.push_back(static_cast<double>(10 + 5 * i) / 100.0);
  return g;
}

inline std::vector<int> default_min_pts_grid() { return {2, 3, 4, 5, 6}; }

inline std::vector<SweepCell> sweep(std::span<const EmbeddingVector> points, std::span<const double> eps_grid,
                                    std::span<const int> min_pts_grid) {
  DistanceMatrix dist(points);
  std::vector<SweepCell> cells;
  for (double eps : eps_grid) {
    for (int m : min_pts_grid) {
      auto r = dbscan(dist, {eps, m});
      auto sizes = r.sizes();
      SweepCell c{eps, m, r.k, r.noise_count(), 0.0, 0};
      if (!sizes.empty()) {
        std::size_t total = 0;
        for (auto s : sizes) total += s;
        c.mean_size = static_cast<double>(total) / static_cast<double>(sizes.size());
        c.largest = *std::max_element(sizes.begin(), sizes.end());
      }
      cells.push_back(c);
    }
  }
  return cells;
}

inline const SweepCell* find_cell(const std::vector<SweepCell>& cells, double eps, int min_pts) {
  for (const auto& c : cells) {
    if (std::abs(c.eps - eps) < 1e-9 && c.min_pts == min_pts) return &c;
  }
  return nullptr;
}

inline std::string format_sweep_tsv(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  os << "eps\tmin_pts\tclusters\tnoise\tmean_size\tlargest\n";
  char buf[64];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%.2f", c.eps);
    os << buf << '\t' << c.min_pts << '\t' << c.k << '\t' << c.noise << '\t';
    std::snprintf(buf, sizeof buf, "%.2f", c.mean_size);
    os << buf << '\t' << c.largest << '\n';
  }
  return os.str();
}

/// Cluster counts, eps down the rows and min_pts across.
inline std::string format_sweep_markdown(const std::vector<SweepCell>& cells) {
  std::vector<double> eps;
  std::vector<int> mins;
  for (const auto& c : cells) {
    if (std::find_if(eps.begin(), eps.end(), [&](double e) { return std::abs(e - c.eps) < 1e-9; }) == eps.end())
      eps.push_back(c.eps);
    if (std::find(mins.begin(), mins.end(), c.min_pts) == mins.end()) mins.push_back(c.min_pts);
  }
  std::ostringstream os;
  os << "| eps \\ min_pts |";
  for (int m : mins) os << ' ' << m << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < mins.size(); ++i) os << "---|";
  os << '\n';
  char buf[32];
  for (double e : eps) {
    std::snprintf(buf, sizeof buf, "%.2f", e);
    os << "| " << buf << " |";
    for (int m : mins) {
      auto* c = find_cell(cells, e, m);
      os << ' ' << (c ? std::to_string(c->k) : std::string("-")) << " |";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace emocause
