#pragma once

// Extended Shaver emotion tree and label resolution for raw model replies.
//
// The tree is loaded from a tab-separated data file (see
// data/taxonomy/extended_shaver_v1.tsv). Every row describes its deepest
// non-empty column:
//
//   basic<TAB>secondary<TAB>tertiary<TAB>goemotions_flag
//
// A name may appear at several places in the tree (Loathing under Rage and
// Disgust, Anger as a basic node and as a tertiary node under Rage) as long as
// every placement has the same basic ancestor.

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "emocause/data_dir.hpp"
#include "emocause/detail/strings.hpp"
#include "emocause/error.hpp"

namespace emocause {

enum class BasicEmotion : std::uint8_t { kAnger, kLove, kFear, kJoy, kSadness, kSurprise };

inline constexpr std::array<BasicEmotion, 6> kBasicEmotions = {
    BasicEmotion::kAnger, BasicEmotion::kLove,    BasicEmotion::kFear,
    BasicEmotion::kJoy,   BasicEmotion::kSadness, BasicEmotion::kSurprise};

constexpr std::string_view to_string(BasicEmotion e) {
  switch (e) {
    case BasicEmotion::kAnger: return "Anger";
    case BasicEmotion::kLove: return "Love";
    case BasicEmotion::kFear: return "Fear";
    case BasicEmotion::kJoy: return "Joy";
    case BasicEmotion::kSadness: return "Sadness";
    case BasicEmotion::kSurprise: return "Surprise";
  }
  return "";
}

inline std::optional<BasicEmotion> parse_basic_emotion(std::string_view name) {
  for (auto e : kBasicEmotions) {
    if (detail::iequals(name, to_string(e))) return e;
  }
  return std::nullopt;
}

inline constexpr std::string_view kNeutral = "Neutral";

/// Neutral or one of the six basic emotions.
class EmotionLabel {
 public:
  constexpr EmotionLabel() = default;  // Neutral
  constexpr EmotionLabel(BasicEmotion e) : basic_(e) {}  // NOLINT(google-explicit-constructor)

  static constexpr EmotionLabel neutral() { return EmotionLabel(); }

  /// Accepts "Neutral" or a basic emotion name, case-insensitive.
  static std::optional<EmotionLabel> parse(std::string_view name) {
    if (detail::iequals(name, kNeutral)) return neutral();
    if (auto b = parse_basic_emotion(name)) return EmotionLabel(*b);
    return std::nullopt;
  }

  constexpr bool is_neutral() const { return !basic_.has_value(); }
  constexpr std::optional<BasicEmotion> basic() const { return basic_; }

  std::string_view name() const { return basic_ ? to_string(*basic_) : kNeutral; }

  friend constexpr bool operator==(const EmotionLabel&, const EmotionLabel&) = default;
  friend constexpr auto operator<=>(const EmotionLabel& a, const EmotionLabel& b) {
    // Neutral sorts first.
    int ra = a.basic_ ? static_cast<int>(*a.basic_) + 1 : 0;
    int rb = b.basic_ ? static_cast<int>(*b.basic_) + 1 : 0;
    return ra <=> rb;
  }

 private:
  std::optional<BasicEmotion> basic_;
};

enum class TaxonomyLevel : std::uint8_t { kBasic, kSecondary, kTertiary };

constexpr std::string_view to_string(TaxonomyLevel level) {
  switch (level) {
    case TaxonomyLevel::kBasic: return "basic";
    case TaxonomyLevel::kSecondary: return "secondary";
    case TaxonomyLevel::kTertiary: return "tertiary";
  }
  return "";
}

struct EmotionNode {
  std::string name;
  TaxonomyLevel level = TaxonomyLevel::kBasic;
  std::optional<std::string> parent;
  BasicEmotion basic = BasicEmotion::kAnger;
  bool goemotions = false;
};

/// Suffix and irregular-form rewrites used to accept minor wording variants
/// ("Confused" for Confusion). Rules only ever produce candidates; a candidate
/// is accepted only if it is one of the allowed names.
struct VariantRules {
  std::vector<std::pair<std::string, std::string>> suffixes;
  std::map<std::string, std::string> irregular;
};

inline VariantRules default_variant_rules() {
  VariantRules rules;
  rules.suffixes = {
      {"ied", "y"},     {"ed", "ion"},    {"ed", "ation"}, {"ed", "ement"}, {"ed", "ance"},
      {"ed", "ment"},   {"ed", "al"},     {"ed", ""},      {"d", ""},       {"ing", "ion"},
      {"ing", "ation"}, {"ing", "ement"}, {"ing", "ance"}, {"ing", "ment"}, {"ing", "e"},
      {"ing", ""},      {"ous", "ousness"}, {"ous", "osity"}, {"istic", "ism"}, {"ful", ""},
      {"e", "ation"},   {"s", ""},
  };
  rules.irregular = {
      {"angry", "anger"},       {"sad", "sadness"}, {"grateful", "gratitude"},
      {"proud", "pride"},       {"relieved", "relief"}, {"grieving", "grief"},
      {"desirous", "desire"},   {"admiring", "admiration"},
  };
  return rules;
}

/// Outcome of mapping one raw model string onto the prompted label set.
struct LabelResolution {
  enum class Outcome : std::uint8_t { kMatched, kNeutral, kHallucination };

  Outcome outcome = Outcome::kHallucination;
  std::string label;  // canonical node name when matched, "Neutral", or the raw string
  std::optional<BasicEmotion> basic;
  std::string raw;

  static LabelResolution matched(std::string node, BasicEmotion basic, std::string raw) {
    return {Outcome::kMatched, std::move(node), basic, std::move(raw)};
  }
  static LabelResolution neutral(std::string raw) {
    return {Outcome::kNeutral, std::string(kNeutral), std::nullopt, std::move(raw)};
  }
  static LabelResolution hallucination(std::string raw) {
    std::string label = raw;
    return {Outcome::kHallucination, std::move(label), std::nullopt, std::move(raw)};
  }

  bool is_matched() const { return outcome == Outcome::kMatched; }
  bool is_hallucination() const { return outcome == Outcome::kHallucination; }

  /// Prediction used for scoring; hallucinations score as Neutral.
  EmotionLabel prediction() const {
    return basic ? EmotionLabel(*basic) : EmotionLabel::neutral();
  }

  friend bool operator==(const LabelResolution&, const LabelResolution&) = default;
};

constexpr std::string_view to_string(LabelResolution::Outcome o) {
  switch (o) {
    case LabelResolution::Outcome::kMatched: return "matched";
    case LabelResolution::Outcome::kNeutral: return "neutral";
    case LabelResolution::Outcome::kHallucination: return "hallucination";
  }
  return "";
}

class EmotionTaxonomy {
 public:
  static EmotionTaxonomy parse(std::istream& in, const std::string& source = "<stream>");

  static EmotionTaxonomy load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
      throw Error(ErrorKind::kConfiguration, "taxonomy data file not found: " + path.string());
    }
    return parse(in, path.string());
  }

  std::span<const EmotionNode> nodes() const { return nodes_; }

  const std::string& format_version() const { return version_; }

  bool contains(std::string_view name) const {
    return index_.contains(detail::ascii_lower(name));
  }

  /// All placements of a name, in file order. Empty when unknown.
  std::vector<const EmotionNode*> placements(std::string_view name) const {
    std::vector<const EmotionNode*> out;
    if (auto it = index_.find(detail::ascii_lower(name)); it != index_.end()) {
      for (auto i : it->second) out.push_back(&nodes_[i]);
    }
    return out;
  }

  /// Canonical spelling of a node name (case-insensitive lookup).
  std::optional<std::string> canonical_name(std::string_view name) const {
    auto it = index_.find(detail::ascii_lower(name));
    if (it == index_.end()) return std::nullopt;
    return nodes_[it->second.front()].name;
  }

  BasicEmotion map_to_basic(std::string_view name) const {
    auto it = index_.find(detail::ascii_lower(name));
    if (it == index_.end()) {
      throw Error(ErrorKind::kNotInTaxonomy, "'" + std::string(name) + "' is not a taxonomy node");
    }
    return nodes_[it->second.front()].basic;
  }

  /// Distinct node names in file order, optionally limited to the top levels.
  std::vector<std::string> names(TaxonomyLevel deepest = TaxonomyLevel::kTertiary) const {
    std::vector<std::string> out;
    std::vector<bool> seen(nodes_.size(), false);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].level > deepest) continue;
      const auto& first = index_.at(detail::ascii_lower(nodes_[i].name)).front();
      if (seen[first]) continue;
      seen[first] = true;
      out.push_back(nodes_[first].name);
    }
    return out;
  }

  /// GoEmotions subset, Table reading order, each name once.
  std::vector<std::string> goemotions_list() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_) {
      if (!n.goemotions) continue;
      bool dup = false;
      for (const auto& o : out) dup = dup || detail::iequals(o, n.name);
      if (!dup) out.push_back(n.name);
    }
    return out;
  }

 private:
  std::vector<EmotionNode> nodes_;
  std::unordered_map<std::string, std::vector<std::size_t>> index_;
  std::string version_;

  void add(EmotionNode node, const std::string& where);
};

inline void EmotionTaxonomy::add(EmotionNode node, const std::string& where) {
  auto key = detail::ascii_lower(node.name);
  if (key == detail::ascii_lower(kNeutral)) {
    throw Error(ErrorKind::kConfiguration, where + ": 'Neutral' cannot be a taxonomy node");
  }
  auto& slots = index_[key];
  for (auto i : slots) {
    const auto& other = nodes_[i];
    if (other.basic != node.basic) {
      throw Error(ErrorKind::kConfiguration,
                  where + ": '" + node.name + "' placed under two basic emotions");
    }
    if (other.level == node.level && other.parent == node.parent) {
      throw Error(ErrorKind::kConfiguration, where + ": duplicate row for '" + node.name + "'");
    }
  }
  slots.push_back(nodes_.size());
  nodes_.push_back(std::move(node));
}

inline EmotionTaxonomy EmotionTaxonomy::parse(std::istream& in, const std::string& source) {
  EmotionTaxonomy tax;
  std::map<std::string, BasicEmotion> declared_basic;                 // lower(basic)
  std::map<std::pair<std::string, std::string>, bool> declared_secondary;  // (basic, secondary)
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto where = source + ":" + std::to_string(line_no);
    auto stripped = detail::trim_view(line);
    if (stripped.empty()) continue;
    if (stripped.front() == '#') {
      constexpr std::string_view kVersionTag = "# format-version:";
      if (detail::starts_with(stripped, kVersionTag)) {
        tax.version_ = detail::trim(stripped.substr(kVersionTag.size()));
      }
      continue;
    }
    auto cols = detail::split(line, '\t');
    if (cols.size() != 4) {
      throw Error(ErrorKind::kConfiguration, where + ": expected 4 tab-separated columns");
    }
    for (auto& c : cols) c = detail::trim(c);
    const auto& basic_name = cols[0];
    const auto& secondary = cols[1];
    const auto& tertiary = cols[2];
    if (cols[3] != "0" && cols[3] != "1") {
      throw Error(ErrorKind::kConfiguration, where + ": goemotions flag must be 0 or 1");
    }
    bool flag = cols[3] == "1";
    auto basic = parse_basic_emotion(basic_name);
    if (!basic || basic_name != to_string(*basic)) {
      throw Error(ErrorKind::kConfiguration, where + ": unknown basic emotion '" + basic_name + "'");
    }
    auto basic_key = detail::ascii_lower(basic_name);
    if (secondary.empty() && tertiary.empty()) {
      if (declared_basic.contains(basic_key)) {
        throw Error(ErrorKind::kConfiguration, where + ": basic emotion declared twice");
      }
      declared_basic[basic_key] = *basic;
      tax.add({basic_name, TaxonomyLevel::kBasic, std::nullopt, *basic, flag}, where);
      continue;
    }
    if (!declared_basic.contains(basic_key)) {
      throw Error(ErrorKind::kConfiguration, where + ": basic emotion row must come first");
    }
    if (secondary.empty()) {
      throw Error(ErrorKind::kConfiguration, where + ": tertiary emotion without secondary");
    }
    auto sec_key = std::make_pair(basic_key, detail::ascii_lower(secondary));
    if (tertiary.empty()) {
      if (declared_secondary.contains(sec_key)) {
        throw Error(ErrorKind::kConfiguration, where + ": secondary emotion declared twice");
      }
      declared_secondary[sec_key] = true;
      tax.add({secondary, TaxonomyLevel::kSecondary, basic_name, *basic, flag}, where);
      continue;
    }
    if (!declared_secondary.contains(sec_key)) {
      throw Error(ErrorKind::kConfiguration,
                  where + ": secondary emotion '" + secondary + "' must be declared first");
    }
    tax.add({tertiary, TaxonomyLevel::kTertiary, secondary, *basic, flag}, where);
  }
  for (auto e : kBasicEmotions) {
    if (!declared_basic.contains(detail::ascii_lower(to_string(e)))) {
      throw Error(ErrorKind::kConfiguration,
                  source + ": basic emotion '" + std::string(to_string(e)) + "' missing");
    }
  }
  return tax;
}

inline std::filesystem::path default_taxonomy_path() {
  return data_dir() / "taxonomy" / "extended_shaver_v1.tsv";
}

inline EmotionTaxonomy build_default_taxonomy() {
  return EmotionTaxonomy::load(default_taxonomy_path());
}

inline BasicEmotion map_to_basic(const EmotionTaxonomy& taxonomy, std::string_view name) {
  return taxonomy.map_to_basic(name);
}

inline std::vector<std::string> goemotions_list(const EmotionTaxonomy& taxonomy) {
  return taxonomy.goemotions_list();
}

inline std::vector<std::string> basic_emotion_names() {
  std::vector<std::string> out;
  for (auto e : kBasicEmotions) out.emplace_back(to_string(e));
  return out;
}

namespace detail {

inline bool is_label_noise_byte_sequence(std::string_view s, std::size_t pos, std::size_t& len) {
  // Curly quotes: U+2018, U+2019, U+201C, U+201D.
  static constexpr std::array<std::string_view, 4> kQuotes = {"\xE2\x80\x98", "\xE2\x80\x99",
                                                              "\xE2\x80\x9C", "\xE2\x80\x9D"};
  for (auto q : kQuotes) {
    if (s.substr(pos, q.size()) == q) {
      len = q.size();
      return true;
    }
  }
  auto c = static_cast<unsigned char>(s[pos]);
  if (c < 0x80 && (std::ispunct(c) || is_ascii_space(static_cast<char>(c)))) {
    len = 1;
    return true;
  }
  return false;
}

/// Strips whitespace, ASCII punctuation and curly quotes from both ends.
inline std::string trim_label(std::string_view s) {
  bool changed = true;
  while (changed && !s.empty()) {
    changed = false;
    std::size_t len = 0;
    if (is_label_noise_byte_sequence(s, 0, len)) {
      s.remove_prefix(len);
      changed = true;
      continue;
    }
    for (std::size_t back : {std::size_t{1}, std::size_t{3}}) {
      if (s.size() >= back && is_label_noise_byte_sequence(s, s.size() - back, len) && len == back) {
        s.remove_suffix(back);
        changed = true;
        break;
      }
    }
  }
  return std::string(s);
}

}  // namespace detail

/// Maps a raw reply onto allowed ∪ {Neutral}: trim, case-fold, exact match,
/// then wording-variant match; anything else is a hallucination.
inline LabelResolution normalize_label(const EmotionTaxonomy& taxonomy, std::string_view raw,
                                       std::span<const std::string> allowed,
                                       const VariantRules& rules = default_variant_rules()) {
  if (allowed.empty()) throw Error(ErrorKind::kInvalidInput, "allowed label list is empty");
  std::map<std::string, std::string> allowed_lower;  // lower -> canonical
  for (const auto& name : allowed) {
    auto canonical = taxonomy.canonical_name(name);
    if (!canonical) {
      throw Error(ErrorKind::kInvalidInput, "allowed label '" + name + "' is not a taxonomy node");
    }
    allowed_lower.emplace(detail::ascii_lower(*canonical), *canonical);
  }

  std::string raw_str(raw);
  auto key = detail::ascii_lower(detail::trim_label(raw));
  if (key.empty()) return LabelResolution::hallucination(raw_str);
  if (key == detail::ascii_lower(kNeutral)) return LabelResolution::neutral(raw_str);

  auto accept = [&](const std::string& candidate) -> std::optional<LabelResolution> {
    auto it = allowed_lower.find(candidate);
    if (it == allowed_lower.end()) return std::nullopt;
    return LabelResolution::matched(it->second, taxonomy.map_to_basic(it->second), raw_str);
  };

  if (auto hit = accept(key)) return *hit;
  if (auto it = rules.irregular.find(key); it != rules.irregular.end()) {
    if (auto hit = accept(it->second)) return *hit;
  }
  for (const auto& [suffix, replacement] : rules.suffixes) {
    if (key.size() <= suffix.size() + 1 || !detail::ends_with(key, suffix)) continue;
    auto candidate = key.substr(0, key.size() - suffix.size()) + replacement;
    if (auto hit = accept(candidate)) return *hit;
  }
  return LabelResolution::hallucination(raw_str);
}

}  // namespace emocause
