#include <catch_amalgamated.hpp>

#include <fstream>
#include <random>

#include "emocause/textprep.hpp"

using namespace emocause;

TEST_CASE("strip_markup examples", "[textprep]") {
  CHECK(strip_markup("see https://x.y/z now") == "see now");
  CHECK(strip_markup("[USER] yep, it is bug") == "yep, it is bug");
  CHECK(strip_markup("") == "");
}

TEST_CASE("strip_markup removes code and collapses whitespace", "[textprep]") {
  CHECK(strip_markup("run `pip install tf` then\n\n```\nimport tf\n```\ndone") == "run then done");
  CHECK(strip_markup("unterminated ```\ncode block") == "unterminated");
  CHECK(strip_markup("link http://a.b/c?d=1, and ftp://x") == "link and");
  CHECK(strip_markup("  a \t b  ") == "a b");
  // Ellipsis markers in brackets are not placeholders.
  CHECK(strip_markup("[...] hello") == "[...] hello");
}

TEST_CASE("tokenize examples", "[textprep]") {
  CHECK(tokenize("I'm not sure!") == TokenList{"im", "not", "sure"});
  CHECK(tokenize("a  b") == TokenList{"a", "b"});
  CHECK(tokenize("...").empty());
}

TEST_CASE("tokenize handles apostrophes, emoji placeholders and unicode", "[textprep]") {
  CHECK(tokenize("don\xE2\x80\x99t 'quoted' it's") == TokenList{"dont", "quoted", "its"});
  CHECK(tokenize("magic to me {grinning-face-with-sweat}") ==
        TokenList{"magic", "to", "me", "grinningfacewithsweat"});
  CHECK(tokenize("\xE2\x80\x9CHi\xE2\x80\x9D\xE2\x80\xA6" "caf\xC3\xA9") == TokenList{"hi", "caf\xC3\xA9"});
  CHECK(tokenize("tensorflow_io_gcs 2.11") == TokenList{"tensorflow", "io", "gcs", "2", "11"});
}

TEST_CASE("porter_stem examples", "[textprep]") {
  CHECK(porter_stem("merging") == "merg");
  CHECK(porter_stem("a") == "a");
  CHECK(porter_stem("frustration") == "frustrat");
  CHECK(porter_stem("is") == "is");
}

TEST_CASE("porter_stem matches the frozen reference stems", "[textprep][oracle]") {
  std::ifstream in(std::string(EMOCAUSE_TEST_DIR) + "/data/porter_oracle.tsv");
  REQUIRE(in);
  std::string line;
  int checked = 0;
  while (std::getline(in, line)) {
    auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    auto word = line.substr(0, tab);
    auto stem = line.substr(tab + 1);
    INFO(word);
    CHECK(porter_stem(word) == stem);
    ++checked;
  }
  CHECK(checked > 2000);
}

TEST_CASE("lemmatize reduces regular inflections", "[textprep]") {
  CHECK(lemmatize("commits") == "commit");
  CHECK(lemmatize("libraries") == "library");
  CHECK(lemmatize("classes") == "class");
  CHECK(lemmatize("fixes") == "fix");
  CHECK(lemmatize("merged") == "merg");
  CHECK(lemmatize("stopped") == "stop");
  CHECK(lemmatize("failing") == "fail");
  CHECK(lemmatize("running") == "run");
  CHECK(lemmatize("worried") == "worry");
  CHECK(lemmatize("is") == "is");
  CHECK(lemmatize("this") == "this");
  CHECK(lemmatize("status") == "status");
  CHECK(lemmatize("nothing") == "nothing");
  CHECK(lemmatize("analysis") == "analysis");
}

TEST_CASE("preprocess_for_eval examples", "[textprep]") {
  CHECK(preprocess_for_eval("the ux is pretty awful") == TokenList{"the", "ux", "is", "pretti", "aw"});
  CHECK(preprocess_for_eval("").empty());
  const std::string text = "[USER] It's weird that these tests are failing: https://ci.example/123";
  CHECK(preprocess_for_eval(text) == preprocess_for_eval(text));
  CHECK(preprocess_for_eval(text) == TokenList{"it", "weird", "that", "these", "test", "ar", "fail"});
}

namespace {

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> kPieces = {
      "Merging",  "conflicts", "tests",  "failing", "I'm",   "CUDA",     "11.4",  "commits",
      "squash",   "awful",     "really", "[USER]",  "http://a.b/c", "`code`", "!!!", "{thumbs-up}",
      "don't",    "merged",    "happily", "libraries", "relational", "hopefulness", ",", "...",
      "generalizations", "agreed", "the", "ux", "is", "pretty", "caresses", "ponies"};
  std::uniform_int_distribution<std::size_t> len(0, 12);
  std::uniform_int_distribution<std::size_t> pick(0, kPieces.size() - 1);
  std::string s;
  for (std::size_t i = 0, n = len(rng); i < n; ++i) {
    if (i) s += ' ';
    s += kPieces[pick(rng)];
  }
  return s;
}

}  // namespace

TEST_CASE("preprocess_for_eval is a fixed point on its own output", "[textprep][property]") {
  std::mt19937_64 rng(12345);
  for (int trial = 0; trial < 500; ++trial) {
    auto text = random_text(rng);
    auto once = preprocess_for_eval(text);
    auto twice = preprocess_for_eval(detail::join(once, " "));
    INFO(text);
    CHECK(once == twice);
  }
  // Porter alone is not idempotent; normalization iterates it.
  REQUIRE(porter_stem("agreed") == "agre");
  REQUIRE(porter_stem("agre") == "agr");
  auto t = preprocess_for_eval("agreed");
  CHECK(t == preprocess_for_eval(detail::join(t, " ")));
}

TEST_CASE("tokenize never produces empty or whitespace tokens", "[textprep][property]") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    auto text = random_text(rng);
    auto tokens = tokenize(text);
    std::size_t words = detail::split_whitespace(text).size();
    std::size_t punct = 0;
    for (char c : text) punct += std::ispunct(static_cast<unsigned char>(c)) ? 1 : 0;
    CHECK(tokens.size() <= words + punct);
    for (const auto& tok : tokens) {
      CHECK_FALSE(tok.empty());
      CHECK(tok.find_first_of(" \t\n\r") == std::string::npos);
      for (char c : tok) CHECK_FALSE((c >= 'A' && c <= 'Z'));
    }
  }
}
