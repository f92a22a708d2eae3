#pragma once

// Prompt templates for emotion classification and cause extraction, and the
// parsers that turn chat replies back into labels and spans.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emocause/detail/strings.hpp"
#include "emocause/error.hpp"
#include "emocause/taxonomy.hpp"
#include "emocause/textprep.hpp"

namespace emocause {

enum class Platform : std::uint8_t { kGitHub, kStackOverflow, kJira };

constexpr std::string_view display_name(Platform p) {
  switch (p) {
    case Platform::kGitHub: return "GitHub";
    case Platform::kStackOverflow: return "Stack Overflow";
    case Platform::kJira: return "JIRA";
  }
  return "";
}

/// Accepts "github", "stackoverflow", "stack-overflow", "Stack Overflow", "jira".
inline std::optional<Platform> parse_platform(std::string_view s) {
  std::string key;
  for (char c : s) {
    if (c != ' ' && c != '-' && c != '_') key += c;
  }
  key = detail::ascii_lower(key);
  if (key == "github") return Platform::kGitHub;
  if (key == "stackoverflow" || key == "so") return Platform::kStackOverflow;
  if (key == "jira") return Platform::kJira;
  return std::nullopt;
}

constexpr std::string_view slug(Platform p) {
  switch (p) {
    case Platform::kGitHub: return "github";
    case Platform::kStackOverflow: return "stackoverflow";
    case Platform::kJira: return "jira";
  }
  return "";
}

enum class PromptKind : std::uint8_t { kClassification, kCauseExtraction };
enum class EmotionListKind : std::uint8_t { kBasic, kGoEmotions, kCustom };

inline std::optional<EmotionListKind> parse_emotion_list_kind(std::string_view s) {
  auto k = detail::ascii_lower(s);
  if (k == "basic") return EmotionListKind::kBasic;
  if (k == "goemotions") return EmotionListKind::kGoEmotions;
  if (k == "custom") return EmotionListKind::kCustom;
  return std::nullopt;
}

constexpr std::string_view to_string(EmotionListKind k) {
  switch (k) {
    case EmotionListKind::kBasic: return "basic";
    case EmotionListKind::kGoEmotions: return "goemotions";
    case EmotionListKind::kCustom: return "custom";
  }
  return "";
}

struct PromptVariant {
  PromptKind kind = PromptKind::kClassification;
  EmotionListKind emotion_list = EmotionListKind::kBasic;
  std::vector<std::string> custom_list;  // used when emotion_list == kCustom
  Platform platform = Platform::kGitHub;

  static PromptVariant classification(Platform p, EmotionListKind list = EmotionListKind::kBasic) {
    return {PromptKind::kClassification, list, {}, p};
  }
  static PromptVariant custom(Platform p, std::vector<std::string> names) {
    return {PromptKind::kClassification, EmotionListKind::kCustom, std::move(names), p};
  }
  static PromptVariant cause() { return {PromptKind::kCauseExtraction, {}, {}, Platform::kGitHub}; }

  friend bool operator==(const PromptVariant&, const PromptVariant&) = default;
};

struct ChatMessage {
  std::string role;  // "user" or "assistant"
  std::string content;
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct RenderedPrompt {
  std::string text;
  PromptVariant variant;
  std::string utterance_id;
  // Prior turns sent ahead of `text` when steps share one conversation.
  std::vector<ChatMessage> context;
};

/// The names listed in the prompt, in prompt order.
inline std::vector<std::string> emotion_list(const EmotionTaxonomy& taxonomy,
                                             const PromptVariant& v) {
  switch (v.emotion_list) {
    case EmotionListKind::kBasic: {
      std::vector<std::string> out = {"Anger", "Fear", "Love", "Joy", "Sadness", "Surprise"};
      if (v.platform == Platform::kJira) {
        std::erase_if(out, [](const std::string& n) { return n == "Fear" || n == "Surprise"; });
      }
      return out;
    }
    case EmotionListKind::kGoEmotions: return taxonomy.goemotions_list();
    case EmotionListKind::kCustom: {
      if (v.custom_list.empty()) throw Error(ErrorKind::kInvalidInput, "custom emotion list is empty");
      std::vector<std::string> out;
      for (const auto& n : v.custom_list) {
        auto canonical = taxonomy.canonical_name(detail::trim(n));
        if (!canonical) throw Error(ErrorKind::kNotInTaxonomy, "'" + n + "' is not in the taxonomy");
        out.push_back(*canonical);
      }
      return out;
    }
  }
  return {};
}

inline RenderedPrompt render_classification_prompt(const EmotionTaxonomy& taxonomy,
                                                   const PromptVariant& variant,
                                                   std::string_view utterance,
                                                   std::string utterance_id = {}) {
  if (variant.kind != PromptKind::kClassification) {
    throw Error(ErrorKind::kInvalidInput, "variant is not a classification prompt");
  }
  if (detail::trim_view(utterance).empty()) throw Error(ErrorKind::kInvalidInput, "utterance is empty");
  auto p = display_name(variant.platform);
  std::string text;
  text += "You are a ";
  text += p;
  text += " user. You are reading comments from ";
  text += p;
  text +=
      ". Your task is to detect whether there is one of the following emotions aroused in you "
      "while reading the utterance.\n\n";
  text += "Emotions List: " + detail::join(emotion_list(taxonomy, variant), ", ") + ".\n\n";
  text += "Utterance: ";
  text += utterance;
  text += ".\n\n";
  text +=
      "If there is no emotion in the text, write Neutral. Otherwise write exactly one word, the "
      "exact emotion from the emotions list.\n";
  return {std::move(text), variant, std::move(utterance_id), {}};
}

inline RenderedPrompt render_cause_prompt(const EmotionTaxonomy& taxonomy, std::string_view emotion,
                                          std::string_view utterance,
                                          std::string utterance_id = {}) {
  auto name = detail::trim(emotion);
  if (name.empty()) throw Error(ErrorKind::kNotInTaxonomy, "emotion name is empty");
  auto canonical = taxonomy.canonical_name(name);
  if (!canonical) throw Error(ErrorKind::kNotInTaxonomy, "'" + name + "' is not in the taxonomy");
  if (detail::trim_view(utterance).empty()) throw Error(ErrorKind::kInvalidInput, "utterance is empty");
  std::string text =
      "You are a GitHub user. You are reading GitHub comments. Your task is to extract the span "
      "that is causing the emotion ";
  text += *canonical;
  text += " in the following GitHub utterance: ";
  text += utterance;
  text += ".\n\nWrite the span of the cause within a double quote.\n\nDo not write anything else.\n";
  return {std::move(text), PromptVariant::cause(), std::move(utterance_id), {}};
}

namespace detail {

inline std::string first_nonblank_line(std::string_view raw) {
  for (const auto& line : split(raw, '\n')) {
    auto t = trim_view(line);
    if (!t.empty()) return std::string(t);
  }
  return {};
}

inline std::string strip_emphasis(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c != '*' && c != '_' && c != '#' && c != '`') out += c;
  }
  return out;
}

}  // namespace detail

/// First non-blank line, markup removed, resolved against `allowed`. A reply
/// of several words is matched when exactly one distinct label (or Neutral)
/// occurs among its tokens.
inline LabelResolution parse_emotion_response(const EmotionTaxonomy& taxonomy, std::string_view raw,
                                              std::span<const std::string> allowed,
                                              const VariantRules& rules = default_variant_rules()) {
  std::string raw_str(raw);
  auto line = detail::collapse_whitespace(detail::strip_emphasis(strip_markup(detail::first_nonblank_line(raw))));
  auto direct = normalize_label(taxonomy, line, allowed, rules);
  if (!direct.is_hallucination()) {
    direct.raw = raw_str;
    return direct;
  }
  std::optional<LabelResolution> found;
  for (const auto& tok : tokenize(line)) {
    auto r = normalize_label(taxonomy, tok, allowed, rules);
    if (r.is_hallucination()) continue;
    if (found && found->label != r.label) return LabelResolution::hallucination(raw_str);
    found = r;
  }
  if (!found) return LabelResolution::hallucination(raw_str);
  found->raw = raw_str;
  return *found;
}

struct ParsedCauseResponse {
  std::string span;
  bool quoted = false;
  friend bool operator==(const ParsedCauseResponse&, const ParsedCauseResponse&) = default;
};

/// Text inside the first pair of double quotes (ASCII or curly), trimmed; the
/// whole trimmed reply with quoted=false when there is no pair.
inline ParsedCauseResponse parse_cause_response(std::string_view raw) {
  static constexpr std::string_view kOpenCurly = "\xE2\x80\x9C";
  static constexpr std::string_view kCloseCurly = "\xE2\x80\x9D";
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == '"') {
      auto end = raw.find('"', i + 1);
      if (end == std::string_view::npos) break;
      return {detail::trim(raw.substr(i + 1, end - i - 1)), true};
    }
    if (raw.substr(i, kOpenCurly.size()) == kOpenCurly) {
      auto start = i + kOpenCurly.size();
      auto end = raw.find(kCloseCurly, start);
      if (end == std::string_view::npos) break;
      return {detail::trim(raw.substr(start, end - start)), true};
    }
  }
  return {detail::trim(raw), false};
}

}  // namespace emocause
