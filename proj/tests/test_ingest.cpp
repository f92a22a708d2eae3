#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "emocause/ingest.hpp"
#include "mock_server.hpp"

using namespace emocause;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "emocause_ingest_test";
  fs::create_directories(dir);
  auto p = dir / name;
  fs::remove(p);
  return p;
}

Utterance make(std::string id, std::vector<std::string> gold = {}, std::optional<std::string> assoc = {}) {
  Utterance u;
  u.id = std::move(id);
  u.text = "text of " + u.id;
  u.gold_emotions = std::move(gold);
  u.author_association = std::move(assoc);
  return u;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

TEST_CASE("timestamps", "[ingest]") {
  auto t = parse_timestamp("2022-03-30T12:34:56Z");
  CHECK(format_timestamp(t) == "2022-03-30T12:34:56Z");
  CHECK(parse_timestamp("2022-03-30") == parse_timestamp("2022-03-30T00:00:00Z"));
  CHECK(parse_timestamp("2022-03-30T02:00:00+02:00") == parse_timestamp("2022-03-30T00:00:00Z"));
  CHECK(parse_timestamp("2022-03-30T00:00:00.123Z") == parse_timestamp("2022-03-30T00:00:00Z"));
  CHECK_THROWS_AS(parse_timestamp("2022-13-01"), Error);
  CHECK_THROWS_AS(parse_timestamp("yesterday"), Error);
  CHECK_THROWS_AS(parse_timestamp("2022-03-30T00:00:00Zjunk"), Error);
}

TEST_CASE("jsonl round trip preserves every field", "[ingest]") {
  std::vector<Utterance> items;
  for (int i = 0; i < 450; ++i) {
    Utterance u;
    u.id = "u" + std::to_string(i);
    u.platform = i % 3 == 0 ? Platform::kGitHub : (i % 3 == 1 ? Platform::kStackOverflow : Platform::kJira);
    u.text = "comment " + std::to_string(i) + " with \"quotes\"\nand a newline \xE2\x80\xA6";
    if (i % 2) u.author_association = "CONTRIBUTOR";
    if (i % 5) u.created_at = "2022-04-01T10:00:00Z";
    if (i % 4) {
      u.gold_emotions = {"Frustration"};
      u.gold_causes = {{"Frustration", "with \"quotes\" and a newline"}};
    }
    u.extra["annotator"] = i % 7;
    u.extra["nested"] = {{"k", "v"}};
    items.push_back(u);
  }
  auto p = temp_path("roundtrip.jsonl");
  save_jsonl(items, p);
  auto loaded = load_jsonl(p);
  CHECK(loaded == items);
  auto p2 = temp_path("roundtrip2.jsonl");
  save_jsonl(loaded, p2);
  std::ifstream a(p), b(p2);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
}

TEST_CASE("jsonl errors carry line numbers and ids", "[ingest]") {
  auto p = temp_path("bad.jsonl");
  write_lines(p, {R"({"id":"a","platform":"github","text":"fine"})", R"({"id":"b","platform":"github"})"});
  try {
    load_jsonl(p);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kValidation);
    CHECK(std::string(e.what()).find("bad.jsonl:2:") != std::string::npos);
    CHECK(std::string(e.what()).find("text") != std::string::npos);
  }
  write_lines(p, {R"({"id":"a","platform":"github","text":"x"})", "", R"({"id":"a","platform":"jira","text":"y"})"});
  CHECK_THROWS_WITH(load_jsonl(p), Catch::Matchers::ContainsSubstring(":3:") &&
                                       Catch::Matchers::ContainsSubstring("duplicate id a"));
  write_lines(p, {"{broken"});
  CHECK_THROWS_WITH(load_jsonl(p), Catch::Matchers::ContainsSubstring(":1: malformed JSON"));
  write_lines(p, {R"({"id":"a","platform":"myspace","text":"x"})"});
  CHECK_THROWS_AS(load_jsonl(p), Error);
  CHECK_THROWS_AS(load_jsonl(temp_path("absent.jsonl")), Error);
}

TEST_CASE("gold cause spans must occur in the text", "[ingest]") {
  auto p = temp_path("spans.jsonl");
  write_lines(p, {
                     R"({"id":"ok","platform":"github","text":"the ux is   pretty\nawful here","gold_emotions":["Frustration"],"gold_causes":[{"emotion":"Frustration","span":"ux is pretty awful"}]})",
                     R"({"id":"bad1","platform":"github","text":"merge conflicts again","gold_emotions":["Frustration"],"gold_causes":[{"emotion":"Frustration","span":"flaky tests"}]})",
                     R"({"id":"bad2","platform":"github","text":"hello","gold_causes":[{"emotion":"Joy","span":""}]})",
                 });
  try {
    load_jsonl(p);
    FAIL("expected error");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(msg.find("bad1") != std::string::npos);
    CHECK(msg.find("bad2") != std::string::npos);
    CHECK(msg.find("of ok") == std::string::npos);
  }
  LoadOptions lax;
  lax.validate_gold = false;
  CHECK(load_jsonl(p, lax).size() == 3);

  auto tax = build_default_taxonomy();
  std::vector<Utterance> v = {make("x", {"Apology"})};
  auto issues = validate_dataset(v, &tax);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].find("Apology") != std::string::npos);
}

TEST_CASE("filter_by_association", "[ingest]") {
  std::vector<Utterance> items;
  const char* assoc[] = {"NONE", "MEMBER", "CONTRIBUTOR", "NONE", "COLLABORATOR",
                         "MEMBER", "none", "CONTRIBUTOR", "OWNER", "MEMBER"};
  for (int i = 0; i < 10; ++i) items.push_back(make("c" + std::to_string(i), {}, assoc[i]));
  auto kept = filter_by_association(items, {"NONE"});
  REQUIRE(kept.size() == 7);
  CHECK(kept[0].id == "c1");
  CHECK(kept[6].id == "c9");
  for (std::size_t i = 1; i < kept.size(); ++i) CHECK(kept[i - 1].id < kept[i].id);
  CHECK(filter_by_association(items, {}) == items);

  std::vector<Utterance> all_none(4, make("n", {}, "NONE"));
  CHECK(filter_by_association(all_none, {"NONE"}).empty());

  std::vector<Utterance> missing = {make("m1"), make("m2", {}, "MEMBER")};
  CHECK(filter_by_association(missing, {"NONE"}).size() == 1);
  CHECK(filter_by_association(missing, {"MEMBER"}).size() == 1);
  CHECK(filter_by_association(missing, {"MEMBER"})[0].id == "m1");
}

TEST_CASE("stratified_split arithmetic and determinism", "[ingest]") {
  std::vector<Utterance> items;
  for (int i = 0; i < 100; ++i) items.push_back(make("i" + std::to_string(i), i % 5 < 3 ? std::vector<std::string>{} : std::vector<std::string>{"Anger"}));
  auto s = stratified_split(items, 0.8, 42);
  auto count = [](const std::vector<Utterance>& v, bool neutral) {
    return std::count_if(v.begin(), v.end(), [&](const Utterance& u) { return u.gold_emotions.empty() == neutral; });
  };
  CHECK(count(s.train, true) == 48);
  CHECK(count(s.train, false) == 32);
  CHECK(s.train.size() + s.test.size() == 100);
  auto again = stratified_split(items, 0.8, 42);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  auto other = stratified_split(items, 0.8, 43);
  CHECK(other.train != s.train);

  std::set<std::string> seen;
  for (const auto& u : s.train) CHECK(seen.insert(u.id).second);
  for (const auto& u : s.test) CHECK(seen.insert(u.id).second);
  CHECK(seen.size() == 100);

  std::vector<Utterance> single = {make("only", {"Joy"})};
  auto one = stratified_split(single, 0.2, 1);
  CHECK(one.train.size() == 1);
  CHECK(one.test.empty());
  CHECK_THROWS_AS(stratified_split(items, 1.0, 1), Error);
  CHECK_THROWS_AS(stratified_split(items, 0.0, 1), Error);
}

TEST_CASE("stratified_split on the 2000-item fixture", "[ingest][split]") {
  auto items = load_jsonl(std::string(EMOCAUSE_TEST_DIR) + "/data/split2000.jsonl");
  REQUIRE(items.size() == 2000);
  auto s = stratified_split(items, 0.8, 7);
  std::map<std::string, int> train, test;
  for (const auto& u : s.train) ++train[primary_stratum(u)];
  for (const auto& u : s.test) ++test[primary_stratum(u)];
  std::ifstream in(std::string(EMOCAUSE_TEST_DIR) + "/data/split2000_expected.tsv");
  std::string line;
  std::getline(in, line);
  const std::map<std::string, double> published = {{"Anger", 0.17},   {"Love", 0.11},    {"Fear", 0.099},
                                                   {"Joy", 0.211},    {"Sadness", 0.137}, {"Surprise", 0.164}};
  while (std::getline(in, line)) {
    auto c = detail::split(line, '\t');
    INFO(line);
    CHECK(train[c[0]] == std::stoi(c[2]));
    CHECK(test[c[0]] == std::stoi(c[3]));
    if (auto it = published.find(c[0]); it != published.end()) {
      CHECK(std::abs(test[c[0]] - it->second * double(s.test.size())) <= 1.0);
    }
  }
  // Output keeps input order.
  for (std::size_t i = 1; i < s.train.size(); ++i) CHECK(s.train[i - 1].id < s.train[i].id);
}

TEST_CASE("portable shuffle is pinned", "[ingest]") {
  std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::mt19937_64 rng(1);
  detail::portable_shuffle(v, rng);
  std::vector<int> again = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::mt19937_64 rng2(1);
  detail::portable_shuffle(again, rng2);
  CHECK(v == again);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(v != sorted);
}

TEST_CASE("basic stratum maps granular labels", "[ingest]") {
  auto tax = build_default_taxonomy();
  auto fn = basic_stratum(tax);
  CHECK(fn(make("a", {"Frustration"})) == "Anger");
  CHECK(fn(make("b", {"Gratitude", "Joy"})) == "Love");
  CHECK(fn(make("c")) == "Neutral");
}

TEST_CASE("csv import", "[ingest]") {
  std::istringstream flags(
      "id,modified_comment,Anger,Love,Fear,Joy,Sadness,Surprise,repo\n"
      "1,\"Thanks, this \"\"works\"\"!\",0,1,0,1,0,0,a/b\n"
      "2,\"multi\nline\",0,0,0,0,0,0,a/c\r\n");
  CsvImportSpec spec;
  spec.text_column = "modified_comment";
  spec.id_column = "id";
  spec.flag_columns = {"Anger", "Love", "Fear", "Joy", "Sadness", "Surprise"};
  auto items = import_csv(flags, spec);
  REQUIRE(items.size() == 2);
  CHECK(items[0].text == "Thanks, this \"works\"!");
  CHECK(items[0].gold_emotions == std::vector<std::string>{"Love", "Joy"});
  CHECK(items[0].extra["repo"] == "a/b");
  CHECK(items[1].text == "multi\nline");
  CHECK(items[1].gold_emotions.empty());

  std::istringstream labels("text;label\nhello;Joy|Surprise\nbye;Neutral\n");
  CsvImportSpec s2;
  s2.platform = Platform::kJira;
  s2.label_column = "label";
  s2.separator = ';';
  auto l = import_csv(labels, s2);
  REQUIRE(l.size() == 2);
  CHECK(l[0].id == "jira-1");
  CHECK(l[0].gold_emotions == std::vector<std::string>{"Joy", "Surprise"});
  CHECK(l[1].gold_emotions.empty());

  std::istringstream missing("a,b\n1,2\n");
  CHECK_THROWS_AS(import_csv(missing, CsvImportSpec{}), Error);
  std::istringstream ragged("text,x\nhello\n");
  CHECK_THROWS_AS(import_csv(ragged, CsvImportSpec{}), Error);
}

namespace {

nlohmann::json comment(int id, const std::string& created, const std::string& assoc, const std::string& body) {
  return {{"id", id},
          {"created_at", created},
          {"author_association", assoc},
          {"body", body},
          {"html_url", "https://github.com/o/r/issues/1#issuecomment-" + std::to_string(id)},
          {"user", {{"login", "dev" + std::to_string(id)}}}};
}

RepoWindow window(std::vector<CommentKind> kinds = {CommentKind::kIssueComments, CommentKind::kPrComments}) {
  return {"o/r", parse_timestamp("2022-03-30T00:00:00Z"), parse_timestamp("2023-03-30T00:00:00Z"), std::move(kinds)};
}

}  // namespace

TEST_CASE("github fetch paginates, filters the window and orders by created_at", "[ingest][http]") {
  MockServer mock;
  std::atomic<int> issue_calls{0};
  std::string seen_query, seen_auth;
  mock.server().Get("/repos/o/r/issues/comments", [&](const httplib::Request& req, httplib::Response& res) {
    ++issue_calls;
    seen_auth = req.get_header_value("Authorization");
    nlohmann::json page = nlohmann::json::array();
    if (req.get_param_value("page") == "2") {
      page.push_back(comment(3, "2022-06-01T00:00:00Z", "NONE", "third"));
      page.push_back(comment(2, "2022-05-01T00:00:00Z", "MEMBER", "second"));  // duplicate id
    } else {
      seen_query = req.get_param_value("since");
      page.push_back(comment(2, "2022-05-01T00:00:00Z", "MEMBER", "second"));
      page.push_back(comment(1, "2022-04-01T00:00:00Z", "CONTRIBUTOR", "first"));
      page.push_back(comment(9, "2021-01-01T00:00:00Z", "MEMBER", "before the window"));
      res.set_header("Link", "<" + std::string("http://127.0.0.1/repos/o/r/issues/comments?page=2") +
                                 ">; rel=\"next\", <http://x/last>; rel=\"last\"");
    }
    res.set_content(page.dump(), "application/json");
  });
  mock.server().Get("/repos/o/r/pulls/comments", [&](const httplib::Request&, httplib::Response& res) {
    nlohmann::json page = nlohmann::json::array();
    page.push_back(comment(5, "2022-04-15T00:00:00Z", "COLLABORATOR", "review remark"));
    page.push_back(comment(6, "2023-04-01T00:00:00Z", "MEMBER", "after the window"));
    page.push_back({{"id", 7}, {"created_at", "2022-04-16T00:00:00Z"}, {"body", ""}});
    res.set_content(page.dump(), "application/json");
  });
  mock.start();

  GitHubConfig cfg;
  cfg.base_url = mock.url();
  cfg.token = "gh-token";
  GitHubClient gh(cfg, [](auto) {});
  auto items = gh.fetch_comments(window());
  REQUIRE(items.size() == 4);
  CHECK(items[0].text == "first");
  CHECK(items[1].text == "review remark");
  CHECK(items[2].text == "second");
  CHECK(items[3].text == "third");
  CHECK(items[0].id == "gh-ic-1");
  CHECK(items[1].id == "gh-pc-5");
  CHECK(items[1].author_association == "COLLABORATOR");
  CHECK(items[1].extra["source"] == "pr_comments");
  CHECK(items[0].extra["user"] == "dev1");
  CHECK(seen_query == "2022-03-30T00:00:00Z");
  CHECK(seen_auth == "Bearer gh-token");
  CHECK(issue_calls == 2);
  std::set<std::string> ids;
  for (const auto& u : items) CHECK(ids.insert(u.id).second);

  auto issues_only = gh.fetch_comments(window({CommentKind::kIssueComments}));
  CHECK(issues_only.size() == 3);

  RepoWindow quiet = window();
  quiet.since = quiet.until - std::chrono::seconds(1);
  CHECK(gh.fetch_comments(quiet).empty());
}

TEST_CASE("github five comments over two pages", "[ingest][http]") {
  MockServer mock;
  mock.server().Get("/repos/o/r/issues/comments", [&](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json page = nlohmann::json::array();
    if (req.get_param_value("page") == "2") {
      page.push_back(comment(14, "2022-09-01T00:00:00Z", "NONE", "d"));
      page.push_back(comment(15, "2022-10-01T00:00:00Z", "MEMBER", "e"));
    } else {
      page.push_back(comment(11, "2022-04-01T00:00:00Z", "NONE", "a"));
      page.push_back(comment(12, "2022-05-01T00:00:00Z", "MEMBER", "b"));
      page.push_back(comment(13, "2022-06-01T00:00:00Z", "MEMBER", "c"));
      res.set_header("Link", "<" + std::string("/repos/o/r/issues/comments?page=2") + ">; rel=\"next\"");
    }
    res.set_content(page.dump(), "application/json");
  });
  mock.start();
  GitHubConfig cfg;
  cfg.base_url = mock.url();
  GitHubClient gh(cfg, [](auto) {});
  auto items = gh.fetch_comments(window({CommentKind::kIssueComments}));
  REQUIRE(items.size() == 5);
  for (std::size_t i = 1; i < items.size(); ++i) CHECK(*items[i - 1].created_time() <= *items[i].created_time());
}

TEST_CASE("github rate limits, auth and missing repos", "[ingest][http]") {
  MockServer mock;
  std::atomic<int> calls{0};
  mock.server().Get("/repos/o/r/issues/comments", [&](const httplib::Request&, httplib::Response& res) {
    if (++calls == 1) {
      res.status = 403;
      res.set_header("X-RateLimit-Remaining", "0");
      res.set_header("X-RateLimit-Reset", "1000000030");
      return;
    }
    res.set_content(nlohmann::json::array({comment(1, "2022-04-01T00:00:00Z", "MEMBER", "ok")}).dump(),
                    "application/json");
  });
  mock.server().Get("/repos/o/always/issues/comments", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 429;
    res.set_header("Retry-After", "3");
  });
  mock.server().Get("/repos/o/private/issues/comments", [](const httplib::Request&, httplib::Response& res) {
    res.status = 401;
  });
  mock.start();
  GitHubConfig cfg;
  cfg.base_url = mock.url();
  cfg.max_retries = 2;
  std::vector<std::chrono::milliseconds> sleeps;
  auto fixed_now = [] { return Timestamp(std::chrono::seconds(1000000000)); };
  GitHubClient gh(cfg, [&](auto d) { sleeps.push_back(d); }, fixed_now);
  auto items = gh.fetch_comments(window({CommentKind::kIssueComments}));
  CHECK(items.size() == 1);
  REQUIRE(sleeps.size() == 1);
  CHECK(sleeps[0] == std::chrono::seconds(31));

  auto kind_of = [&](const std::string& repo) {
    auto w = window({CommentKind::kIssueComments});
    w.repo = repo;
    try {
      gh.fetch_comments(w);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kIo;
  };
  sleeps.clear();
  CHECK(kind_of("o/always") == ErrorKind::kRateLimited);
  CHECK(sleeps == std::vector<std::chrono::milliseconds>(2, std::chrono::seconds(3)));
  CHECK(kind_of("o/private") == ErrorKind::kAuth);
  CHECK(kind_of("o/nothing") == ErrorKind::kNotFound);
  CHECK(kind_of("not-a-repo") == ErrorKind::kInvalidInput);
}

TEST_CASE("github fetch resumes from a checkpoint", "[ingest][http]") {
  MockServer mock;
  std::atomic<int> page2_calls{0}, page1_calls{0};
  std::atomic<bool> fail_page2{true};
  mock.server().Get("/repos/o/r/issues/comments", [&](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json page = nlohmann::json::array();
    if (req.get_param_value("page") == "2") {
      ++page2_calls;
      if (fail_page2) {
        res.status = 404;
        return;
      }
      page.push_back(comment(2, "2022-05-01T00:00:00Z", "MEMBER", "two"));
    } else {
      ++page1_calls;
      page.push_back(comment(1, "2022-04-01T00:00:00Z", "MEMBER", "one"));
      res.set_header("Link", "</repos/o/r/issues/comments?page=2>; rel=\"next\"");
    }
    res.set_content(page.dump(), "application/json");
  });
  mock.start();
  GitHubConfig cfg;
  cfg.base_url = mock.url();
  GitHubClient gh(cfg, [](auto) {});
  auto ckpt = temp_path("fetch.ckpt.json");
  auto w = window({CommentKind::kIssueComments});
  CHECK_THROWS_AS(gh.fetch_comments(w, ckpt), Error);
  REQUIRE(fs::exists(ckpt));
  fail_page2 = false;
  auto items = gh.fetch_comments(w, ckpt);
  REQUIRE(items.size() == 2);
  CHECK(page1_calls == 1);
  CHECK(page2_calls == 2);
  // A completed checkpoint answers without any request.
  auto cached = gh.fetch_comments(w, ckpt);
  CHECK(cached == items);
  CHECK(page1_calls == 1);
  CHECK(page2_calls == 2);
}
