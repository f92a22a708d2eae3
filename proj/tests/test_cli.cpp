#include <catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "emocause/cli.hpp"
#include "mock_server.hpp"
#include "oracles/dbscan_oracle.hpp"

using namespace emocause;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

const std::string kTestDir = EMOCAUSE_TEST_DIR;

const EmotionTaxonomy& tax() {
  static const EmotionTaxonomy t = build_default_taxonomy();
  return t;
}

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / "emocause_cli_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

RunOptions stub_options(const fs::path& out) {
  RunOptions o;
  o.model.provider_id = "stub";
  o.out_dir = out;
  o.log = nullptr;
  o.taxonomy = &tax();
  o.sleeper = [](auto) {};
  return o;
}

std::string slurp(const fs::path& p) { return detail::read_file(p); }

Utterance utt(std::string id, std::string text, std::vector<std::string> gold = {}, Platform p = Platform::kGitHub) {
  Utterance u;
  u.id = std::move(id);
  u.text = std::move(text);
  u.gold_emotions = std::move(gold);
  u.platform = p;
  return u;
}

/// Stub replies recorded into a fixture store, so the same run can be
/// replayed afterwards.
std::shared_ptr<CompletionProvider> recording_stub(const fs::path& fixtures) {
  auto store = std::make_shared<FixtureStore>(fixtures, false);
  return std::make_shared<RecordingProvider>(std::make_shared<StubChatProvider>(), store);
}

class FixedReply : public CompletionProvider {
 public:
  explicit FixedReply(std::string reply) : reply_(std::move(reply)) {}
  std::string complete(const ModelConfig&, const RenderedPrompt&, const std::string&) override { return reply_; }

 private:
  std::string reply_;
};

/// Records what it was asked, answers like the stub.
class Spy : public CompletionProvider {
 public:
  std::string complete(const ModelConfig& c, const RenderedPrompt& p, const std::string& d) override {
    std::lock_guard lock(mu);
    prompts.push_back(p);
    return stub.complete(c, p, d);
  }
  std::mutex mu;
  std::vector<RenderedPrompt> prompts;
  StubChatProvider stub;
};

}  // namespace

TEST_CASE("classify: 2000 items, recorded then replayed byte-identically", "[cli][classify]") {
  auto dir = fresh_dir("classify2000");
  auto dataset = kTestDir + "/data/split2000.jsonl";
  auto fixtures = dir / "fixtures.jsonl";

  auto rec_opt = stub_options(dir / "recorded");
  rec_opt.provider = recording_stub(fixtures);
  auto rec = cmd_classify({dataset}, rec_opt);
  CHECK(rec.manifest["status"] == "ok");
  CHECK(rec.manifest["summary"]["items"] == 2000);
  CHECK(rec.manifest["summary"]["errors"] == 0);

  auto rep_opt = stub_options(dir / "replayed");
  rep_opt.model.provider_id = "replay";
  rep_opt.fixtures = fixtures;
  auto rep = cmd_classify({dataset}, rep_opt);
  CHECK(rep.manifest["summary"]["errors"] == 0);
  CHECK(slurp(dir / "recorded/predictions.jsonl") == slurp(dir / "replayed/predictions.jsonl"));

  auto rows = detail::read_jsonl(dir / "replayed/predictions.jsonl");
  REQUIRE(rows.size() == 2000);
  CHECK(rows.front()["id"] == "gh-0000");
  CHECK(rows.back()["id"] == "gh-1999");
  for (const auto& r : rows) REQUIRE(r.contains("outcome"));

  auto m = rep.manifest;
  CHECK(m["command"] == "classify");
  CHECK(m["config"]["provider"] == "replay");
  CHECK(m["inputs"]["dataset"]["sha256"].get<std::string>().size() == 64);
  CHECK(m["inputs"].contains("fixtures"));
  CHECK(m["outputs"]["predictions"] == "predictions.jsonl");
  CHECK(m["input_digest"].get<std::string>().size() == 64);
  CHECK(fs::exists(dir / "replayed/manifest.json"));
}

TEST_CASE("classify: empty dataset gives empty predictions and a warning", "[cli][classify]") {
  auto dir = fresh_dir("classify_empty");
  detail::write_file(dir / "empty.jsonl", "");
  auto r = cmd_classify({dir / "empty.jsonl"}, stub_options(dir / "run"));
  CHECK(slurp(dir / "run/predictions.jsonl").empty());
  REQUIRE(r.warnings.size() == 1);
  CHECK_THAT(r.warnings[0], ContainsSubstring("empty"));
  CHECK(r.manifest["warnings"].size() == 1);
}

TEST_CASE("classify: variant rules per platform and hallucination count", "[cli][classify]") {
  auto dir = fresh_dir("classify_jira");
  std::vector<Utterance> items = {utt("j1", "I'm worried this will break the release", {}, Platform::kJira),
                                  utt("j2", "Thanks for the review", {}, Platform::kJira),
                                  utt("j3", "This is so frustrating", {}, Platform::kJira),
                                  utt("g1", "I'm worried this will break the release")};
  save_jsonl(items, dir / "d.jsonl");

  auto basic = cmd_classify({dir / "d.jsonl", EmotionListKind::kBasic}, stub_options(dir / "basic"));
  auto rows = detail::read_jsonl(dir / "basic/predictions.jsonl");
  // JIRA's basic list has no Fear, so the stub's "Fear" is a hallucination there.
  CHECK(rows[0]["outcome"] == "hallucination");
  CHECK(rows[0]["prediction"] == "Neutral");
  CHECK(rows[1]["label"] == "Love");
  CHECK(rows[2]["label"] == "Anger");
  CHECK(rows[3]["label"] == "Fear");
  CHECK(basic.manifest["summary"]["hallucinations"] == 1);

  cmd_classify({dir / "d.jsonl", EmotionListKind::kGoEmotions}, stub_options(dir / "go"));
  auto go = detail::read_jsonl(dir / "go/predictions.jsonl");
  CHECK(go[0]["label"] == "Fear");
  CHECK(go[0]["outcome"] == "matched");
  CHECK(go[1]["label"] == "Gratitude");
  CHECK(go[2]["outcome"] == "hallucination");  // Frustration is not a GoEmotions label

  cmd_classify({dir / "d.jsonl", EmotionListKind::kBasic, Platform::kGitHub}, stub_options(dir / "override"));
  CHECK(detail::read_jsonl(dir / "override/predictions.jsonl")[0]["label"] == "Fear");
}

TEST_CASE("classify: gateway errors are recorded per item", "[cli][classify]") {
  auto dir = fresh_dir("classify_errors");
  std::vector<Utterance> items = {utt("a", "great work"), utt("b", "thanks a lot")};
  save_jsonl(items, dir / "d.jsonl");
  auto fixtures = dir / "fx.jsonl";
  auto store = std::make_shared<FixtureStore>(fixtures, false);
  auto p = render_classification_prompt(tax(), PromptVariant::classification(Platform::kGitHub), "great work", "a");
  store->put(prompt_digest("gpt-4", p), "gpt-4", "Joy");

  auto opt = stub_options(dir / "run");
  opt.model.provider_id = "replay";
  opt.fixtures = fixtures;
  auto r = cmd_classify({dir / "d.jsonl"}, opt);
  CHECK(r.manifest["status"] == "ok");
  CHECK(r.manifest["summary"]["errors"] == 1);
  auto rows = detail::read_jsonl(dir / "run/predictions.jsonl");
  CHECK(rows[0]["label"] == "Joy");
  CHECK(rows[1]["error"]["kind"] == "MissingFixture");
  CHECK(rows[1]["outcome"] == "error");
  auto audit = detail::read_jsonl(dir / "run/audit.jsonl");
  CHECK(audit.size() == 2);
}

TEST_CASE("extract-causes: 450 annotated utterances", "[cli][extract]") {
  auto dir = fresh_dir("extract450");
  std::vector<Utterance> items;
  const char* themes[] = {"the build keeps failing on arm64", "the docs are awful", "this flaky test is annoying"};
  for (int i = 0; i < 460; ++i) {
    auto text = std::string("Sigh, ") + themes[i % 3] + ", issue " + std::to_string(i) + ".";
    items.push_back(utt("c" + std::to_string(i), text, i < 450 ? std::vector<std::string>{"Frustration"}
                                                                : std::vector<std::string>{}));
  }
  save_jsonl(items, dir / "d.jsonl");
  auto fixtures = dir / "fx.jsonl";
  auto rec_opt = stub_options(dir / "rec");
  rec_opt.provider = recording_stub(fixtures);
  cmd_extract_causes({dir / "d.jsonl"}, rec_opt);

  auto opt = stub_options(dir / "rep");
  opt.model.provider_id = "replay";
  opt.fixtures = fixtures;
  auto r = cmd_extract_causes({dir / "d.jsonl"}, opt);
  CHECK(r.manifest["summary"]["records"] == 450);
  CHECK(r.manifest["summary"]["skipped_neutral"] == 10);
  CHECK(r.manifest["summary"]["errors"] == 0);
  auto rows = detail::read_jsonl(dir / "rep/causes.jsonl");
  REQUIRE(rows.size() == 450);
  CHECK(rows[0]["span"] == "the build keeps failing on arm64");
  CHECK(rows[0]["quoted"] == true);
  CHECK(rows[0]["emotion"] == "Frustration");
  CHECK(slurp(dir / "rec/causes.jsonl") == slurp(dir / "rep/causes.jsonl"));
}

TEST_CASE("extract-causes: unquoted replies and predicted emotions", "[cli][extract]") {
  auto dir = fresh_dir("extract_unquoted");
  std::vector<Utterance> items = {utt("a", "why is this so slow", {"Anger"}), utt("b", "ok"),
                                  utt("c", "thanks for the fix")};
  save_jsonl(items, dir / "d.jsonl");
  auto opt = stub_options(dir / "run");
  opt.provider = std::make_shared<FixedReply>("this is so slow");
  cmd_extract_causes({dir / "d.jsonl"}, opt);
  auto rows = detail::read_jsonl(dir / "run/causes.jsonl");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0]["quoted"] == false);
  CHECK(rows[0]["span"] == "this is so slow");

  // Predictions supply an emotion where gold has none.
  auto pred_opt = stub_options(dir / "pred");
  cmd_classify({dir / "d.jsonl", EmotionListKind::kGoEmotions}, pred_opt);
  auto with_pred = stub_options(dir / "with_pred");
  cmd_extract_causes({dir / "d.jsonl", dir / "pred/predictions.jsonl"}, with_pred);
  auto r2 = detail::read_jsonl(dir / "with_pred/causes.jsonl");
  REQUIRE(r2.size() == 2);
  CHECK(r2[1]["id"] == "c");
  CHECK(r2[1]["emotion"] == "Gratitude");
}

TEST_CASE("extract-causes: shared conversation carries the classification turn", "[cli][extract]") {
  auto dir = fresh_dir("extract_shared");
  std::vector<Utterance> items = {utt("a", "this flaky test is annoying", {"Frustration"})};
  save_jsonl(items, dir / "d.jsonl");
  cmd_classify({dir / "d.jsonl", EmotionListKind::kGoEmotions}, stub_options(dir / "pred"));

  auto spy = std::make_shared<Spy>();
  auto opt = stub_options(dir / "shared");
  opt.provider = spy;
  opt.conversation = ConversationMode::kShared;
  CHECK_THROWS_AS(cmd_extract_causes({dir / "d.jsonl"}, opt), Error);
  cmd_extract_causes({dir / "d.jsonl", dir / "pred/predictions.jsonl"}, opt);
  REQUIRE(spy->prompts.size() == 1);
  REQUIRE(spy->prompts[0].context.size() == 2);
  CHECK(spy->prompts[0].context[0].role == "user");
  CHECK_THAT(spy->prompts[0].context[0].content, ContainsSubstring("Emotions List: "));
  CHECK(spy->prompts[0].context[1].content == "Frustration");

  auto independent = stub_options(dir / "independent");
  cmd_extract_causes({dir / "d.jsonl", dir / "pred/predictions.jsonl"}, independent);
  auto a = detail::read_jsonl(dir / "shared/causes.jsonl")[0];
  auto b = detail::read_jsonl(dir / "independent/causes.jsonl")[0];
  CHECK(a["prompt_digest"] != b["prompt_digest"]);
  CHECK(a["span"] == b["span"]);
}

TEST_CASE("evaluate f1: perfect predictions and id mismatch", "[cli][evaluate]") {
  auto dir = fresh_dir("eval_f1");
  std::vector<Utterance> gold = {utt("a", "x", {"Anger"}), utt("b", "y", {"Frustration"}), utt("c", "z"),
                                 utt("d", "w", {"Joy", "Love"})};
  save_jsonl(gold, dir / "gold.jsonl");
  auto pred = [](const std::string& id, const std::string& p) {
    return ojson{{"id", id}, {"model_name", "m"}, {"outcome", "matched"}, {"prediction", p}, {"error", nullptr}};
  };
  detail::write_jsonl(dir / "p.jsonl", {pred("a", "Anger"), pred("b", "Anger"), pred("c", "Neutral"), pred("d", "Love")});
  auto r = cmd_evaluate({dir / "gold.jsonl", dir / "p.jsonl"}, stub_options(dir / "run"));
  CHECK(r.manifest["summary"]["micro_f1"] == 1.0);
  CHECK_THAT(slurp(dir / "run/eval.md"), ContainsSubstring("| Micro Avg. |"));
  CHECK_THAT(slurp(dir / "run/eval.tsv"), ContainsSubstring("micro\t3\t0\t0\t1.000\t1.000\t1.000\n"));

  detail::write_jsonl(dir / "short.jsonl", {pred("a", "Anger"), pred("x", "Joy")});
  try {
    cmd_evaluate({dir / "gold.jsonl", dir / "short.jsonl"}, stub_options(dir / "bad"));
    FAIL("expected error");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK_THAT(msg, ContainsSubstring("missing predictions: b, c, d"));
    CHECK_THAT(msg, ContainsSubstring("predictions without gold: x"));
  }
  auto failed = load_manifest(dir / "bad");
  CHECK(failed["status"] == "failed");
  CHECK(failed["failed_stage"] == "score");
}

TEST_CASE("evaluate f1: derived four-item example", "[cli][evaluate]") {
  auto dir = fresh_dir("eval_four");
  std::vector<Utterance> gold = {utt("1", "a", {"Anger"}), utt("2", "b", {"Joy"}), utt("3", "c", {"Love"}), utt("4", "d")};
  save_jsonl(gold, dir / "gold.jsonl");
  std::vector<ojson> rows;
  const char* p[] = {"Anger", "Love", "Love", "Joy"};
  for (int i = 0; i < 4; ++i) {
    rows.push_back({{"id", std::to_string(i + 1)}, {"outcome", "matched"}, {"prediction", p[i]}, {"error", nullptr}});
  }
  detail::write_jsonl(dir / "p.jsonl", rows);
  auto r = cmd_evaluate({dir / "gold.jsonl", dir / "p.jsonl"}, stub_options(dir / "run"));
  CHECK_THAT(r.manifest["summary"]["micro_f1"].get<double>(), WithinAbs(0.571, 0.001));
  auto rep = cmd_report(dir / "run");
  CHECK_THAT(rep.markdown, ContainsSubstring("| 0.571 |\n"));
  CHECK_THAT(rep.tsv, ContainsSubstring("micro\t2\t2\t1\t0.500\t0.667\t0.571\n"));
}

TEST_CASE("evaluate bleu: identical candidates score 1", "[cli][evaluate][bleu]") {
  auto dir = fresh_dir("eval_bleu_same");
  std::vector<Utterance> gold;
  std::vector<ojson> causes;
  const char* spans[] = {"the build keeps failing", "docs are totally out of date", "merge conflicts every single day"};
  for (int i = 0; i < 3; ++i) {
    auto u = utt("u" + std::to_string(i), std::string("Ugh, ") + spans[i] + ".", {"Frustration"});
    u.gold_causes = {{"Frustration", spans[i]}};
    gold.push_back(u);
    causes.push_back({{"id", u.id}, {"emotion", "Frustration"}, {"span", spans[i]}, {"quoted", true}, {"error", nullptr}});
  }
  save_jsonl(gold, dir / "gold.jsonl");
  detail::write_jsonl(dir / "c.jsonl", causes);
  EvaluateArgs a{dir / "gold.jsonl", dir / "c.jsonl", EvalMode::kBleu};
  a.smoothing = Smoothing::kNone;
  auto r = cmd_evaluate(a, stub_options(dir / "run"));
  for (int n = 1; n <= 4; ++n) CHECK(r.manifest["summary"]["bleu_" + std::to_string(n)].get<double>() == Catch::Approx(1.0));

  causes.pop_back();
  detail::write_jsonl(dir / "c2.jsonl", causes);
  CHECK_THROWS_WITH(cmd_evaluate({dir / "gold.jsonl", dir / "c2.jsonl", EvalMode::kBleu}, stub_options(dir / "bad")),
                    ContainsSubstring("u2 (frustration)"));
}

TEST_CASE("evaluate bleu: 20-pair fixture matches the recorded oracle", "[cli][evaluate][bleu][oracle]") {
  auto gold_path = kTestDir + "/data/bleu20_gold.jsonl";
  auto causes_path = kTestDir + "/data/bleu20_causes.jsonl";
  // Fixture words are invariant under preprocessing, so the oracle could
  // score plain whitespace tokens.
  for (const auto& u : load_jsonl(gold_path)) {
    for (const auto& c : u.gold_causes) CHECK(preprocess_for_eval(c.span) == detail::split_whitespace(c.span));
  }
  for (const auto& c : detail::read_jsonl(causes_path)) {
    auto s = c["span"].get<std::string>();
    CHECK(preprocess_for_eval(s) == detail::split_whitespace(s));
  }

  std::map<int, std::pair<double, double>> expected;
  std::ifstream in(kTestDir + "/data/bleu20_expected.tsv");
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    auto c = detail::split(line, '\t');
    expected[std::stoi(c[0])] = {std::stod(c[1]), std::stod(c[2])};
  }
  REQUIRE(expected.size() == 4);

  auto dir = fresh_dir("eval_bleu20");
  for (auto smoothing : {Smoothing::kNone, Smoothing::kHalvedCount}) {
    EvaluateArgs a{gold_path, causes_path, EvalMode::kBleu};
    a.smoothing = smoothing;
    auto r = cmd_evaluate(a, stub_options(dir / (smoothing == Smoothing::kNone ? "none" : "halved")));
    auto j = detail::read_json(dir / (smoothing == Smoothing::kNone ? "none" : "halved") / "bleu.json");
    CHECK(j["pairs"] == 20);
    for (int n = 1; n <= 4; ++n) {
      double want = smoothing == Smoothing::kNone ? expected[n].first : expected[n].second;
      CHECK_THAT(j["report"]["bleu_" + std::to_string(n)].get<double>(), WithinAbs(want, 1e-12));
    }
    const auto& l = j["lengths"];
    CHECK(l["mean_gold_span_tokens"].get<double>() > 0.0);
    CHECK(l["mean_utterance_tokens"].get<double>() > l["mean_gold_span_tokens"].get<double>());
    CHECK(r.manifest["summary"]["pairs"] == 20);
  }
  auto rep = cmd_report(dir / "none");
  CHECK_THAT(rep.markdown, ContainsSubstring("| Model | BLEU-1 | BLEU-2 | BLEU-3 | BLEU-4 |"));
  CHECK_THAT(rep.markdown, ContainsSubstring("| fixture |"));
  CHECK_THAT(rep.markdown, ContainsSubstring("Mean gold span length"));
  CHECK_THAT(rep.tsv, ContainsSubstring("model\tbleu_1\tbleu_2\tbleu_3\tbleu_4\n"));
}

namespace {

MineArgs mine40_args() {
  MineArgs a;
  a.comments = kTestDir + "/data/mine40.jsonl";
  return a;
}

}  // namespace

TEST_CASE("mine: 40-comment fixture matches the golden report", "[cli][mine][golden]") {
  auto dir = fresh_dir("mine40");
  auto args = mine40_args();
  CHECK(args.cluster.eps == 0.3);
  CHECK(args.cluster.min_pts == 4);
  CHECK(args.emotion == "Frustration");
  CHECK(args.variant == EmotionListKind::kGoEmotions);
  auto r = cmd_mine(args, stub_options(dir / "a"));
  const auto& s = r.manifest["summary"];
  CHECK(s["fetched"] == 40);
  CHECK(s["after_filter"] == 33);
  CHECK(s["selected"] == 21);
  CHECK(s["clusters"] == 3);
  CHECK(s["noise"] == 4);
  CHECK(slurp(dir / "a/cluster_report.md") == slurp(kTestDir + "/golden/mine40/cluster_report.md"));
  CHECK(slurp(dir / "a/cluster_report.tsv") == slurp(kTestDir + "/golden/mine40/cluster_report.tsv"));

  for (const auto& name : {"comments", "filtered", "predictions", "selected", "causes", "embeddings", "clusters"}) {
    INFO(name);
    CHECK(fs::exists(dir / "a" / r.manifest["outputs"][name].get<std::string>()));
  }
  // No NONE-association comment reaches classification.
  for (const auto& u : load_jsonl(dir / "a/filtered.jsonl")) CHECK(u.author_association.value_or("NONE") != "NONE");

  // The clustering agrees with the brute-force reference on the stored vectors.
  auto pts = load_vectors(dir / "a/embeddings.jsonl");
  std::vector<std::vector<double>> raw(pts.points.begin(), pts.points.end());
  auto want = oracle::dbscan(raw, 0.3, 4);
  auto rows = detail::read_jsonl(dir / "a/clusters.jsonl");
  std::map<int, std::set<std::size_t>> got;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i]["core"].get<bool>() == want.core[i]);
    if (rows[i]["core"].get<bool>()) got[rows[i]["cluster"].get<int>()].insert(i);
    CHECK((rows[i]["cluster"].get<int>() != kNoise) == want.reachable[i]);
  }
  std::set<std::set<std::size_t>> got_partition;
  for (auto& [_, v] : got) got_partition.insert(v);
  CHECK(got_partition == want.core_partition);
}

TEST_CASE("mine: reruns are byte-identical", "[cli][mine][determinism]") {
  auto dir = fresh_dir("mine_twice");
  auto a = cmd_mine(mine40_args(), stub_options(dir / "a"));
  auto opt = stub_options(dir / "b");
  opt.parallelism = 3;
  cmd_mine(mine40_args(), opt);
  for (const auto& [name, file] : a.manifest["outputs"].items()) {
    if (name == "audit") continue;
    INFO(name);
    CHECK(slurp(dir / "a" / file.get<std::string>()) == slurp(dir / "b" / file.get<std::string>()));
  }

  // Deleting the outputs and re-running from the manifest reproduces them.
  auto golden = slurp(dir / "a/cluster_report.md");
  auto predictions = slurp(dir / "a/predictions.jsonl");
  fs::remove(dir / "a/cluster_report.md");
  fs::remove(dir / "a/predictions.jsonl");
  auto ropt = stub_options(dir / "a");
  rerun(dir / "a/manifest.json", ropt);
  CHECK(slurp(dir / "a/cluster_report.md") == golden);
  CHECK(slurp(dir / "a/predictions.jsonl") == predictions);
}

TEST_CASE("mine: report renders the cluster table", "[cli][mine][report]") {
  auto dir = fresh_dir("mine_report");
  cmd_mine(mine40_args(), stub_options(dir / "run"));
  auto rep = cmd_report(dir / "run/manifest.json");
  CHECK(rep.markdown == slurp(kTestDir + "/golden/mine40/cluster_report.md"));
  CHECK(rep.tsv == slurp(kTestDir + "/golden/mine40/cluster_report.tsv"));
  CHECK_THAT(rep.markdown, ContainsSubstring("| Cluster | Description | Count | Examples |"));

  fs::remove(dir / "run/cluster_summary.json");
  CHECK_THROWS_WITH(cmd_report(dir / "run"), ContainsSubstring("cluster_summary.json"));
  CHECK_THROWS_AS(cmd_report(dir / "nowhere"), Error);
}

TEST_CASE("mine: unknown emotion fails before fetching", "[cli][mine]") {
  MockServer mock;
  std::atomic<int> calls{0};
  mock.server().Get(R"(/.*)", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.set_content("[]", "application/json");
  });
  mock.start();
  auto dir = fresh_dir("mine_bad_emotion");
  auto opt = stub_options(dir / "run");
  GitHubConfig gc;
  gc.base_url = mock.url();
  opt.github = std::make_shared<GitHubClient>(gc, [](auto) {});
  MineArgs a;
  a.repo = "o/r";
  a.since = "2022-03-30";
  a.until = "2023-03-30";
  a.emotion = "Apology";
  CHECK_THROWS_AS(cmd_mine(a, opt), Error);
  try {
    cmd_mine(a, opt);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNotInTaxonomy);
  }
  CHECK(calls == 0);
  CHECK_FALSE(fs::exists(dir / "run/manifest.json"));
}

TEST_CASE("mine: live fetch through the GitHub client", "[cli][mine][http]") {
  MockServer mock;
  auto fixture = load_jsonl(kTestDir + "/data/mine40.jsonl");
  mock.server().Get("/repos/example/widgets/issues/comments", [&](const httplib::Request&, httplib::Response& res) {
    nlohmann::json page = nlohmann::json::array();
    int n = 0;
    for (const auto& u : fixture) {
      page.push_back({{"id", ++n},
                      {"body", u.text},
                      {"created_at", *u.created_at},
                      {"author_association", u.author_association ? nlohmann::json(*u.author_association) : nlohmann::json(nullptr)},
                      {"user", {{"login", "dev"}}}});
    }
    res.set_content(page.dump(), "application/json");
  });
  mock.server().Get("/repos/example/missing/issues/comments",
                    [](const httplib::Request&, httplib::Response& res) { res.status = 404; });
  mock.start();
  auto dir = fresh_dir("mine_live");
  auto opt = stub_options(dir / "run");
  GitHubConfig gc;
  gc.base_url = mock.url();
  opt.github = std::make_shared<GitHubClient>(gc, [](auto) {});
  MineArgs a;
  a.repo = "example/widgets";
  a.since = "2022-03-30";
  a.until = "2023-03-30";
  a.kinds = {CommentKind::kIssueComments};
  auto r = cmd_mine(a, opt);
  CHECK(r.manifest["summary"]["fetched"] == 40);
  CHECK(r.manifest["summary"]["clusters"] == 3);
  CHECK(fs::exists(dir / "run/fetch.checkpoint.json"));

  // A stage failure aborts, and the manifest names the stage.
  a.repo = "example/missing";
  auto opt2 = stub_options(dir / "failed");
  opt2.github = opt.github;
  CHECK_THROWS_AS(cmd_mine(a, opt2), Error);
  auto m = load_manifest(dir / "failed");
  CHECK(m["status"] == "failed");
  CHECK(m["failed_stage"] == "fetch");
  CHECK_THAT(m["error"].get<std::string>(), ContainsSubstring("example/missing"));
  CHECK_THROWS_AS(cmd_report(dir / "failed"), Error);
}

TEST_CASE("sweep: three-blob fixture reports the selected cell", "[cli][sweep]") {
  auto dir = fresh_dir("sweep_blobs");
  SweepArgs a;
  a.input = kTestDir + "/data/three_blobs.tsv";
  auto r = cmd_sweep(a, stub_options(dir / "run"));
  CHECK(r.manifest["summary"]["points"] == 81);
  auto j = detail::read_json(dir / "run/sweep.json");
  CHECK(j["cells"].size() == 75);
  CHECK(j["selected"]["clusters"] == 2);
  CHECK(j["selected"]["noise"] == 11);
  CHECK(slurp(dir / "run/sweep.tsv").rfind("eps\tmin_pts\tclusters\tnoise\tmean_size\tlargest\n", 0) == 0);
  auto rep = cmd_report(dir / "run");
  CHECK_THAT(rep.markdown, ContainsSubstring("Selected eps=0.30, min_pts=4: 2 clusters, 11 noise points."));

  // A dataset of texts is embedded first.
  SweepArgs t;
  t.input = kTestDir + "/data/mine40.jsonl";
  auto rt = cmd_sweep(t, stub_options(dir / "texts"));
  CHECK(rt.manifest["summary"]["points"] == 40);
}

TEST_CASE("import and split commands", "[cli]") {
  auto dir = fresh_dir("import_split");
  detail::write_file(dir / "in.csv", "id,text,label\n1,\"hello, world\",Joy\n2,meh,\n3,thanks,Love|Joy\n");
  ImportArgs ia;
  ia.csv = dir / "in.csv";
  ia.spec.id_column = "id";
  ia.spec.label_column = "label";
  auto r = cmd_import(ia, stub_options(dir / "imp"));
  CHECK(r.manifest["summary"]["items"] == 3);
  auto items = load_jsonl(dir / "imp/dataset.jsonl");
  CHECK(items[0].text == "hello, world");
  CHECK(items[2].gold_emotions == std::vector<std::string>{"Love", "Joy"});

  auto s = cmd_split({kTestDir + "/data/split2000.jsonl", 0.8, false}, stub_options(dir / "split"));
  CHECK(s.manifest["summary"]["strata"]["Anger"]["train"] == 272);
  CHECK(s.manifest["summary"]["strata"]["Neutral"]["test"] == 44);
  CHECK(load_jsonl(dir / "split/train.jsonl").size() + load_jsonl(dir / "split/test.jsonl").size() == 2000);
  auto again = rerun(dir / "split", stub_options(dir / "split_again"));
  CHECK(slurp(dir / "split/train.jsonl") == slurp(dir / "split_again/train.jsonl"));
}

TEST_CASE("rerun swaps a recording provider for replay", "[cli][rerun]") {
  auto dir = fresh_dir("rerun_replay");
  std::vector<Utterance> items = {utt("a", "thanks!"), utt("b", "this is awful")};
  save_jsonl(items, dir / "d.jsonl");
  auto fixtures = dir / "fx.jsonl";
  auto opt = stub_options(dir / "rec");
  opt.model.provider_id = "record";
  opt.fixtures = fixtures;
  opt.provider = recording_stub(fixtures);
  cmd_classify({dir / "d.jsonl"}, opt);

  auto ropt = stub_options(dir / "again");
  auto r = rerun(dir / "rec/manifest.json", ropt);
  CHECK(r.manifest["config"]["provider"] == "replay");
  CHECK(r.manifest["summary"]["errors"] == 0);
  CHECK(slurp(dir / "rec/predictions.jsonl") == slurp(dir / "again/predictions.jsonl"));
}
