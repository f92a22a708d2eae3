#pragma once

// Micro-averaged classification scores and BLEU-N with brevity penalty.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "emocause/error.hpp"
#include "emocause/taxonomy.hpp"
#include "emocause/textprep.hpp"

namespace emocause {

// ---------------------------------------------------------------------------
// Classification

using GoldLabels = std::set<EmotionLabel>;

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  ClassCounts& operator+=(const ClassCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  static ClassScores from_counts(const ClassCounts& c) {
    ClassScores s;
    if (c.tp + c.fp > 0) s.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (c.tp + c.fn > 0) s.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    if (s.precision + s.recall > 0) s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
    return s;
  }
};

enum class NeutralPooling { kExclude, kInclude };

struct EvalReport {
  std::map<EmotionLabel, ClassCounts> counts;
  std::map<EmotionLabel, ClassScores> per_class;
  ClassCounts pooled;
  ClassScores micro;
  std::size_t items = 0;
  NeutralPooling neutral = NeutralPooling::kExclude;
};

/// Per item and class c: tp when pred = c and c ∈ gold; fp when pred = c and
/// c ∉ gold; fn when c ∈ gold and pred ∉ gold. Micro scores pool the counts
/// over `classes` (plus Neutral in kInclude mode).
inline EvalReport classification_report(std::span<const GoldLabels> gold,
                                        std::span<const EmotionLabel> pred,
                                        const std::set<BasicEmotion>& classes,
                                        NeutralPooling neutral = NeutralPooling::kExclude) {
  if (gold.size() != pred.size()) {
    throw Error(ErrorKind::kInvalidInput, "gold has " + std::to_string(gold.size()) +
                                              " items but predictions have " +
                                              std::to_string(pred.size()));
  }
  std::vector<EmotionLabel> scored;
  if (neutral == NeutralPooling::kInclude) scored.push_back(EmotionLabel::neutral());
  for (auto c : classes) scored.emplace_back(c);

  EvalReport report;
  report.items = gold.size();
  report.neutral = neutral;
  for (const auto& c : scored) report.counts[c] = {};

  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& g = gold[i];
    if (g.empty()) {
      throw Error(ErrorKind::kInvalidInput, "gold entry " + std::to_string(i) + " is empty");
    }
    if (g.size() > 1 && g.contains(EmotionLabel::neutral())) {
      throw Error(ErrorKind::kInvalidInput,
                  "gold entry " + std::to_string(i) + " mixes Neutral with emotions");
    }
    const auto& p = pred[i];
    bool pred_in_gold = g.contains(p);
    for (const auto& c : scored) {
      auto& cc = report.counts[c];
      bool c_in_gold = g.contains(c);
      if (p == c && c_in_gold) ++cc.tp;
      if (p == c && !c_in_gold) ++cc.fp;
      if (c_in_gold && !pred_in_gold) ++cc.fn;
    }
  }
  for (const auto& [c, cc] : report.counts) {
    report.per_class[c] = ClassScores::from_counts(cc);
    report.pooled += cc;
  }
  report.micro = ClassScores::from_counts(report.pooled);
  return report;
}

// ---------------------------------------------------------------------------
// BLEU

enum class Smoothing { kNone, kHalvedCount };

struct BleuConfig {
  int max_n = 4;
  Smoothing smoothing = Smoothing::kHalvedCount;

  /// Uniform weight 1/n used for BLEU-n.
  static double weight(int n) { return 1.0 / static_cast<double>(n); }

  void validate() const {
    if (max_n < 1 || max_n > 4) throw Error(ErrorKind::kInvalidInput, "BLEU max_n must be in 1..4");
  }
};

struct BleuReport {
  std::vector<std::size_t> matched;  // clipped matches per order
  std::vector<std::size_t> total;    // candidate n-grams per order
  std::vector<double> precision;     // p_n after smoothing
  std::vector<double> score;         // BLEU-1 .. BLEU-max_n
  double bp = 0.0;
  bool bp_defined = false;           // false for an empty candidate
  std::size_t candidate_len = 0;
  std::size_t reference_len = 0;

  double bleu(int n) const { return score.at(static_cast<std::size_t>(n - 1)); }
};

struct BleuPair {
  TokenList candidate;
  std::vector<TokenList> references;
};

enum class BleuAggregation { kCorpus, kSentenceMean };

namespace detail {

struct NgramLess {
  bool operator()(std::span<const std::string> a, std::span<const std::string> b) const {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  }
};

using NgramCounts = std::map<std::span<const std::string>, std::size_t, NgramLess>;

inline NgramCounts count_ngrams(const TokenList& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  std::span<const std::string> all(tokens);
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[all.subspan(i, n)];
  return counts;
}

struct PairStats {
  std::vector<std::size_t> matched;
  std::vector<std::size_t> total;
  std::size_t c = 0;
  std::size_t r = 0;
};

inline std::vector<const TokenList*> usable_references(const std::vector<TokenList>& refs) {
  std::vector<const TokenList*> out;
  for (const auto& r : refs) {
    if (!r.empty()) out.push_back(&r);
  }
  if (out.empty()) throw Error(ErrorKind::kInvalidInput, "BLEU needs at least one non-empty reference");
  return out;
}

inline PairStats pair_stats(const TokenList& candidate, const std::vector<TokenList>& references,
                            int max_n) {
  auto refs = usable_references(references);
  PairStats s;
  s.c = candidate.size();
  // Closest reference length; ties go to the shorter one.
  s.r = refs.front()->size();
  for (const auto* ref : refs) {
    auto len = ref->size();
    auto d_new = len > s.c ? len - s.c : s.c - len;
    auto d_old = s.r > s.c ? s.r - s.c : s.c - s.r;
    if (d_new < d_old || (d_new == d_old && len < s.r)) s.r = len;
  }
  for (int n = 1; n <= max_n; ++n) {
    auto nn = static_cast<std::size_t>(n);
    auto cand = count_ngrams(candidate, nn);
    NgramCounts max_ref;
    for (const auto* ref : refs) {
      for (const auto& [gram, cnt] : count_ngrams(*ref, nn)) {
        auto& slot = max_ref[gram];
        slot = std::max(slot, cnt);
      }
    }
    std::size_t matched = 0;
    for (const auto& [gram, cnt] : cand) {
      if (auto it = max_ref.find(gram); it != max_ref.end()) matched += std::min(cnt, it->second);
    }
    s.matched.push_back(matched);
    s.total.push_back(candidate.size() >= nn ? candidate.size() - nn + 1 : 0);
  }
  return s;
}

inline BleuReport finish(const PairStats& s, const BleuConfig& config) {
  BleuReport rep;
  rep.matched = s.matched;
  rep.total = s.total;
  rep.candidate_len = s.c;
  rep.reference_len = s.r;
  const auto orders = static_cast<std::size_t>(config.max_n);
  rep.precision.assign(orders, 0.0);
  rep.score.assign(orders, 0.0);
  if (s.c == 0) return rep;
  rep.bp_defined = true;
  rep.bp = s.c > s.r ? 1.0 : std::exp(1.0 - static_cast<double>(s.r) / static_cast<double>(s.c));
  for (std::size_t i = 0; i < orders; ++i) {
    if (s.total[i] == 0) continue;
    if (s.matched[i] > 0) {
      rep.precision[i] = static_cast<double>(s.matched[i]) / static_cast<double>(s.total[i]);
    } else if (config.smoothing == Smoothing::kHalvedCount) {
      rep.precision[i] = 1.0 / (2.0 * static_cast<double>(s.total[i]));
    }
  }
  for (std::size_t n = 1; n <= orders; ++n) {
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (rep.precision[i] <= 0.0) {
        zero = true;
        break;
      }
      log_sum += BleuConfig::weight(static_cast<int>(n)) * std::log(rep.precision[i]);
    }
    rep.score[n - 1] = zero ? 0.0 : rep.bp * std::exp(log_sum);
  }
  return rep;
}

}  // namespace detail

inline BleuReport sentence_bleu(const TokenList& candidate, const std::vector<TokenList>& references,
                                const BleuConfig& config = {}) {
  config.validate();
  return detail::finish(detail::pair_stats(candidate, references, config.max_n), config);
}

/// Sums clipped matches, candidate n-grams, and lengths over all pairs before
/// computing precisions and the brevity penalty.
inline BleuReport corpus_bleu(std::span<const BleuPair> pairs, const BleuConfig& config = {}) {
  config.validate();
  if (pairs.empty()) throw Error(ErrorKind::kInvalidInput, "corpus BLEU over an empty pair list");
  detail::PairStats sum;
  sum.matched.assign(static_cast<std::size_t>(config.max_n), 0);
  sum.total.assign(static_cast<std::size_t>(config.max_n), 0);
  for (const auto& p : pairs) {
    auto s = detail::pair_stats(p.candidate, p.references, config.max_n);
    for (std::size_t i = 0; i < s.matched.size(); ++i) {
      sum.matched[i] += s.matched[i];
      sum.total[i] += s.total[i];
    }
    sum.c += s.c;
    sum.r += s.r;
  }
  return detail::finish(sum, config);
}

/// Mean of sentence-level scores; precisions and bp are averaged too.
inline BleuReport mean_sentence_bleu(std::span<const BleuPair> pairs, const BleuConfig& config = {}) {
  config.validate();
  if (pairs.empty()) throw Error(ErrorKind::kInvalidInput, "sentence BLEU over an empty pair list");
  const auto orders = static_cast<std::size_t>(config.max_n);
  BleuReport mean;
  mean.matched.assign(orders, 0);
  mean.total.assign(orders, 0);
  mean.precision.assign(orders, 0.0);
  mean.score.assign(orders, 0.0);
  mean.bp_defined = true;
  for (const auto& p : pairs) {
    auto s = sentence_bleu(p.candidate, p.references, config);
    for (std::size_t i = 0; i < orders; ++i) {
      mean.matched[i] += s.matched[i];
      mean.total[i] += s.total[i];
      mean.precision[i] += s.precision[i];
      mean.score[i] += s.score[i];
    }
    mean.bp += s.bp;
    mean.candidate_len += s.candidate_len;
    mean.reference_len += s.reference_len;
  }
  auto n = static_cast<double>(pairs.size());
  for (std::size_t i = 0; i < orders; ++i) {
    mean.precision[i] /= n;
    mean.score[i] /= n;
  }
  mean.bp /= n;
  return mean;
}

inline BleuReport bleu(std::span<const BleuPair> pairs, const BleuConfig& config,
                       BleuAggregation aggregation) {
  return aggregation == BleuAggregation::kCorpus ? corpus_bleu(pairs, config)
                                                 : mean_sentence_bleu(pairs, config);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& [label, cc] : r.counts) {
    const auto& s = r.per_class.at(label);
    rows.push_back({{"class", std::string(label.name())},
                    {"tp", cc.tp},
                    {"fp", cc.fp},
                    {"fn", cc.fn},
                    {"precision", s.precision},
                    {"recall", s.recall},
                    {"f1", s.f1}});
  }
  return {{"items", r.items},
          {"neutral_pooled", r.neutral == NeutralPooling::kInclude},
          {"per_class", rows},
          {"micro",
           {{"tp", r.pooled.tp},
            {"fp", r.pooled.fp},
            {"fn", r.pooled.fn},
            {"precision", r.micro.precision},
            {"recall", r.micro.recall},
            {"f1", r.micro.f1}}}};
}

inline nlohmann::ordered_json to_json(const BleuReport& r) {
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < r.score.size(); ++i) {
    j["bleu_" + std::to_string(i + 1)] = r.score[i];
  }
  for (std::size_t i = 0; i < r.precision.size(); ++i) {
    j["p_" + std::to_string(i + 1)] = r.precision[i];
  }
  j["matched"] = r.matched;
  j["total"] = r.total;
  j["bp"] = r.bp;
  j["bp_defined"] = r.bp_defined;
  j["candidate_len"] = r.candidate_len;
  j["reference_len"] = r.reference_len;
  return j;
}

inline std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

/// Per-class rows plus a micro row, as a markdown table.
inline std::string format_eval_markdown(const EvalReport& r, const std::string& model) {
  std::string header = "| Model |";
  std::string rule = "|---|";
  std::string row = "| " + model + " |";
  for (const auto& [label, s] : r.per_class) {
    header += " " + std::string(label.name()) + " |";
    rule += "---|";
    row += " " + format_score(s.f1) + " |";
  }
  header += " Micro Avg. |\n";
  rule += "---|\n";
  row += " " + format_score(r.micro.f1) + " |\n";
  return header + rule + row;
}

inline std::string format_eval_tsv(const EvalReport& r) {
  std::string out = "class\ttp\tfp\tfn\tprecision\trecall\tf1\n";
  auto line = [&](const std::string& name, const ClassCounts& c, const ClassScores& s) {
    out += name + "\t" + std::to_string(c.tp) + "\t" + std::to_string(c.fp) + "\t" +
           std::to_string(c.fn) + "\t" + format_score(s.precision) + "\t" + format_score(s.recall) +
           "\t" + format_score(s.f1) + "\n";
  };
  for (const auto& [label, cc] : r.counts) line(std::string(label.name()), cc, r.per_class.at(label));
  line("micro", r.pooled, r.micro);
  return out;
}

inline std::string format_bleu_markdown(const BleuReport& r, const std::string& model) {
  std::string header = "| Model |";
  std::string rule = "|---|";
  std::string row = "| " + model + " |";
  for (std::size_t i = 0; i < r.score.size(); ++i) {
    header += " BLEU-" + std::to_string(i + 1) + " |";
    rule += "---|";
    row += " " + format_score(r.score[i]) + " |";
  }
  return header + "\n" + rule + "\n" + row + "\n";
}

inline std::string format_bleu_tsv(const BleuReport& r, const std::string& model) {
  std::string header = "model";
  std::string row = model;
  for (std::size_t i = 0; i < r.score.size(); ++i) {
    header += "\tbleu_" + std::to_string(i + 1);
    row += "\t" + format_score(r.score[i]);
  }
  return header + "\n" + row + "\n";
}

}  // namespace emocause
