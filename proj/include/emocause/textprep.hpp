#pragma once

// Text normalization shared by BLEU scoring and cluster preprocessing.

#include <array>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "emocause/detail/strings.hpp"
#include "emocause/porter_stemmer.hpp"

namespace emocause {

/// Lowercase, non-empty, whitespace-free tokens in text order.
using TokenList = std::vector<std::string>;

/// Removes URLs, fenced and inline code, and bracketed placeholders such as
/// "[USER]", then collapses whitespace.
inline std::string strip_markup(std::string_view text) {
  static const std::regex kFenced(R"(```[\s\S]*?(```|$))");
  static const std::regex kInlineCode(R"(`[^`\n]*`)");
  static const std::regex kUrl(R"([A-Za-z][A-Za-z0-9+.\-]*://\S+)");
  static const std::regex kPlaceholder(R"(\[[A-Z][A-Z_]*\])");
  std::string s(text);
  s = std::regex_replace(s, kFenced, " ");
  s = std::regex_replace(s, kInlineCode, " ");
  s = std::regex_replace(s, kUrl, " ");
  s = std::regex_replace(s, kPlaceholder, " ");
  return detail::collapse_whitespace(s);
}

namespace detail {

inline bool is_word_byte(char c) {
  auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u);
}

// U+2019 right single quotation mark, used as an apostrophe.
inline constexpr std::string_view kRightQuote = "\xE2\x80\x99";

// Unicode punctuation treated like ASCII punctuation.
inline constexpr std::array<std::string_view, 7> kUnicodePunct = {
    "\xE2\x80\x98", "\xE2\x80\x9C", "\xE2\x80\x9D", "\xE2\x80\xA6",
    "\xE2\x80\x93", "\xE2\x80\x94", "\xC2\xA0"};

}  // namespace detail

/// Case-folds, turns punctuation into spaces (apostrophes inside words are
/// dropped), and splits on whitespace. "{name-of-emoji}" placeholders become
/// one token with the hyphens removed.
inline TokenList tokenize(std::string_view text) {
  static const std::regex kEmoji(R"(\{([A-Za-z0-9]+(?:-[A-Za-z0-9]+)*)\})");
  std::string s;
  {
    std::string src(text);
    std::string out;
    auto begin = std::sregex_iterator(src.begin(), src.end(), kEmoji);
    std::size_t last = 0;
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      out.append(src, last, static_cast<std::size_t>(m.position(0)) - last);
      std::string name = m.str(1);
      std::erase(name, '-');
      out += ' ';
      out += name;
      out += ' ';
      last = static_cast<std::size_t>(m.position(0) + m.length(0));
    }
    out.append(src, last);
    s = std::move(out);
  }

  std::string cleaned;
  cleaned.reserve(s.size());
  std::string_view sv(s);
  for (std::size_t i = 0; i < sv.size();) {
    char c = sv[i];
    auto prev_word = [&] { return !cleaned.empty() && detail::is_word_byte(cleaned.back()); };
    if (c == '\'' || sv.substr(i, detail::kRightQuote.size()) == detail::kRightQuote) {
      std::size_t len = c == '\'' ? 1 : detail::kRightQuote.size();
      bool next_word = i + len < sv.size() && detail::is_word_byte(sv[i + len]) &&
                       sv.substr(i + len, 3) != detail::kRightQuote;
      if (!(prev_word() && next_word)) cleaned += ' ';
      i += len;
      continue;
    }
    bool unicode_punct = false;
    for (auto p : detail::kUnicodePunct) {
      if (sv.substr(i, p.size()) == p) {
        cleaned += ' ';
        i += p.size();
        unicode_punct = true;
        break;
      }
    }
    if (unicode_punct) continue;
    auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) {
      cleaned += ' ';
    } else if (c >= 'A' && c <= 'Z') {
      cleaned += static_cast<char>(c - 'A' + 'a');
    } else {
      cleaned += c;
    }
    ++i;
  }
  return detail::split_whitespace(cleaned);
}

namespace detail {

inline bool has_vowel(std::string_view s) {
  return s.find_first_of("aeiouy") != std::string_view::npos;
}

inline const std::set<std::string, std::less<>>& lemma_exceptions() {
  static const std::set<std::string, std::less<>> kWords = {
      "always", "anything", "bias",     "bring",   "ceiling", "during",  "embed",
      "evening", "everything", "exceed", "feed",   "hundred", "indeed",  "king",
      "morning", "need",     "nothing",  "perhaps", "plus",   "proceed", "ring",
      "seed",    "sing",     "something", "speed", "spring",  "status",  "string",
      "succeed", "thing",    "this",     "thus",    "yes"};
  return kWords;
}

inline bool undoubles(char c) { return c != 'l' && c != 's' && c != 'z'; }

}  // namespace detail

/// Rule-based lemma approximation: regular plurals and -ed/-ing endings are
/// reduced. Never lengthens a token.
inline std::string lemmatize(std::string_view token) {
  std::string w(token);
  if (w.size() <= 3 || detail::lemma_exceptions().contains(w)) return w;

  auto strip_verbal = [&](std::size_t suffix_len) {
    std::string stem = w.substr(0, w.size() - suffix_len);
    if (stem.size() >= 3 && stem[stem.size() - 1] == stem[stem.size() - 2] &&
        !detail::has_vowel(std::string_view(&stem.back(), 1)) && detail::undoubles(stem.back())) {
      stem.pop_back();
    }
    return stem;
  };

  if (detail::ends_with(w, "ies") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
  if (detail::ends_with(w, "sses")) return w.substr(0, w.size() - 2);
  if (detail::ends_with(w, "xes") || detail::ends_with(w, "ches") || detail::ends_with(w, "shes")) {
    return w.substr(0, w.size() - 2);
  }
  if (detail::ends_with(w, "s") && !detail::ends_with(w, "ss") && !detail::ends_with(w, "us") &&
      !detail::ends_with(w, "is")) {
    return w.substr(0, w.size() - 1);
  }
  if (detail::ends_with(w, "ied") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
  if (detail::ends_with(w, "ed") && w.size() > 4 &&
      detail::has_vowel(std::string_view(w).substr(0, w.size() - 2))) {
    return strip_verbal(2);
  }
  if (detail::ends_with(w, "ing") && w.size() > 5 &&
      detail::has_vowel(std::string_view(w).substr(0, w.size() - 3))) {
    return strip_verbal(3);
  }
  return w;
}

/// lemmatize then porter_stem, repeated until the token stops changing, so
/// that the per-token normalization is idempotent.
inline std::string normalize_token(std::string_view token) {
  std::string cur(token);
  for (int i = 0; i < 16; ++i) {
    std::string next = porter_stem(lemmatize(cur));
    if (next == cur) break;
    cur = std::move(next);
  }
  return cur;
}

/// strip_markup -> tokenize -> lemmatize -> stem.
inline TokenList preprocess_for_eval(std::string_view text) {
  TokenList tokens = tokenize(strip_markup(text));
  for (auto& t : tokens) t = normalize_token(t);
  std::erase_if(tokens, [](const std::string& t) { return t.empty(); });
  return tokens;
}

}  // namespace emocause
