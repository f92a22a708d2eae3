// Command-line front end for the emocause pipelines.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "emocause/cli.hpp"

namespace {

using namespace emocause;

struct Common {
  std::string provider = "replay";
  std::string model = "gpt-4";
  std::string fixtures;
  std::string out = "run";
  std::uint64_t seed = 7;
  int parallelism = 8;
  std::string conversation = "independent";
  std::string base_url = "https://api.openai.com/v1";
  std::string embedder = "stub";
  std::string github_url = "https://api.github.com";
  double temperature = 0.0;
  int max_retries = 3;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--provider", c.provider, "Completion provider")
      ->check(CLI::IsMember({"live", "replay", "stub", "record"}))
      ->capture_default_str();
  app->add_option("--model", c.model, "Model name")->capture_default_str();
  app->add_option("--fixtures", c.fixtures, "Recorded responses (JSONL) for replay/record");
  app->add_option("--out", c.out, "Run directory")->capture_default_str();
  app->add_option("--seed", c.seed, "Seed for splits and stub embeddings")->capture_default_str();
  app->add_option("--parallelism", c.parallelism, "Concurrent model requests")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--conversation", c.conversation, "Prompt steps in independent or shared conversations")
      ->check(CLI::IsMember({"independent", "shared"}))
      ->capture_default_str();
  app->add_option("--base-url", c.base_url, "Chat-completion endpoint")->capture_default_str();
  app->add_option("--temperature", c.temperature, "Decoding temperature")->capture_default_str();
  app->add_option("--max-retries", c.max_retries, "Retries for transient failures")->capture_default_str();
  app->add_option("--embedder", c.embedder, "Embedding provider")
      ->check(CLI::IsMember({"stub", "live"}))
      ->capture_default_str();
  app->add_option("--github-url", c.github_url, "GitHub API base URL")->capture_default_str();
}

RunOptions options_of(const Common& c) {
  RunOptions o;
  o.model.provider_id = c.provider;
  o.model.model_name = c.model;
  o.model.base_url = c.base_url;
  o.model.temperature = c.temperature;
  o.model.max_retries = c.max_retries;
  if (!c.fixtures.empty()) o.fixtures = c.fixtures;
  o.out_dir = c.out;
  o.seed = c.seed;
  o.parallelism = c.parallelism;
  o.conversation = parse_conversation_mode(c.conversation);
  o.embedder = c.embedder;
  o.github_config.base_url = c.github_url;
  return o;
}

EmotionListKind variant_of(const std::string& s) {
  auto v = parse_emotion_list_kind(s);
  if (!v || *v == EmotionListKind::kCustom) throw Error(ErrorKind::kInvalidInput, "variant must be basic or goemotions");
  return *v;
}

std::vector<CommentKind> kinds_of(const std::string& s) {
  if (s == "issues") return {CommentKind::kIssueComments};
  if (s == "prs") return {CommentKind::kPrComments};
  return {CommentKind::kIssueComments, CommentKind::kPrComments};
}

void print_result(const RunResult& r) {
  std::cout << "manifest: " << r.manifest_path.string() << '\n';
  std::cout << r.manifest["summary"].dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emotion classification, cause extraction and cause clustering for developer comments"};
  app.require_subcommand(1);

  Common common;

  auto* classify = app.add_subcommand("classify", "Classify every utterance of a dataset");
  ClassifyArgs classify_args;
  std::string classify_variant = "basic", classify_platform;
  classify->add_option("--dataset", classify_args.dataset, "Dataset JSONL")->required();
  classify->add_option("--variant", classify_variant, "Emotion list")
      ->check(CLI::IsMember({"basic", "goemotions"}))
      ->capture_default_str();
  classify->add_option("--platform", classify_platform, "Override the platform named in prompts")
      ->check(CLI::IsMember({"github", "stackoverflow", "jira"}));
  add_common(classify, common);

  auto* extract = app.add_subcommand("extract-causes", "Extract the span causing each utterance's emotion");
  ExtractArgs extract_args;
  std::string extract_predictions;
  extract->add_option("--dataset", extract_args.dataset, "Dataset JSONL")->required();
  extract->add_option("--predictions", extract_predictions, "Predictions JSONL from classify");
  add_common(extract, common);

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions (f1) or extracted causes (bleu)");
  EvaluateArgs eval_args;
  std::string eval_mode = "f1", smoothing = "halved", aggregation = "corpus";
  bool include_neutral = false;
  evaluate->add_option("--dataset,--gold", eval_args.gold, "Gold dataset JSONL")->required();
  evaluate->add_option("--predictions", eval_args.predicted, "predictions.jsonl or causes.jsonl")->required();
  evaluate->add_option("--mode", eval_mode)->check(CLI::IsMember({"f1", "bleu"}))->capture_default_str();
  evaluate->add_option("--smoothing", smoothing)->check(CLI::IsMember({"none", "halved"}))->capture_default_str();
  evaluate->add_option("--aggregation", aggregation)
      ->check(CLI::IsMember({"corpus", "sentence"}))
      ->capture_default_str();
  evaluate->add_flag("--include-neutral", include_neutral, "Pool Neutral into micro scores");
  add_common(evaluate, common);

  auto* mine = app.add_subcommand("mine", "Fetch, classify, extract and cluster causes for one emotion");
  MineArgs mine_args;
  std::string mine_comments, mine_variant = "goemotions", mine_kinds = "all";
  mine->add_option("--repo", mine_args.repo, "owner/name");
  mine->add_option("--since", mine_args.since, "Window start (inclusive, ISO 8601)");
  mine->add_option("--until", mine_args.until, "Window end (exclusive, ISO 8601)");
  mine->add_option("--dataset,--comments", mine_comments, "Comments JSONL used instead of the GitHub API");
  mine->add_option("--emotion", mine_args.emotion, "Taxonomy emotion to keep")->capture_default_str();
  mine->add_option("--variant", mine_variant)->check(CLI::IsMember({"basic", "goemotions"}))->capture_default_str();
  mine->add_option("--eps", mine_args.cluster.eps)->capture_default_str();
  mine->add_option("--min-pts", mine_args.cluster.min_pts)->capture_default_str();
  mine->add_option("--kinds", mine_kinds, "Comment kinds to fetch")
      ->check(CLI::IsMember({"all", "issues", "prs"}))
      ->capture_default_str();
  mine->add_option("--exclude", mine_args.exclude_associations, "Author associations to drop")->capture_default_str();
  mine->add_option("--top-terms", mine_args.top_terms)->capture_default_str();
  add_common(mine, common);

  auto* fetch = app.add_subcommand("fetch", "Download issue and review comments for a repository window");
  FetchArgs fetch_args;
  std::string fetch_kinds = "all";
  fetch->add_option("--repo", fetch_args.repo)->required();
  fetch->add_option("--since", fetch_args.since)->required();
  fetch->add_option("--until", fetch_args.until)->required();
  fetch->add_option("--kinds", fetch_kinds)->check(CLI::IsMember({"all", "issues", "prs"}))->capture_default_str();
  add_common(fetch, common);

  auto* sweep = app.add_subcommand("sweep", "DBSCAN cluster counts over an eps x min_pts grid");
  SweepArgs sweep_args;
  double report_eps = 0.3;
  int report_min_pts = 4;
  sweep->add_option("--dataset,--input", sweep_args.input, "Vectors (.tsv, embeddings .jsonl) or a dataset")->required();
  sweep->add_option("--eps", report_eps, "Cell to report")->capture_default_str();
  sweep->add_option("--min-pts", report_min_pts, "Cell to report")->capture_default_str();
  add_common(sweep, common);

  auto* import = app.add_subcommand("import", "Convert a CSV export into dataset JSONL");
  ImportArgs import_args;
  std::string import_platform = "github", import_flags;
  char import_sep = ',';
  import->add_option("--csv", import_args.csv)->required();
  import->add_option("--platform", import_platform)
      ->check(CLI::IsMember({"github", "stackoverflow", "jira"}))
      ->capture_default_str();
  import->add_option("--text-column", import_args.spec.text_column)->capture_default_str();
  import->add_option("--id-column", import_args.spec.id_column);
  import->add_option("--label-column", import_args.spec.label_column, "Pipe-separated labels");
  import->add_option("--flag-columns", import_flags, "Comma-separated 0/1 emotion columns");
  import->add_option("--separator", import_sep)->capture_default_str();
  add_common(import, common);

  auto* split = app.add_subcommand("split", "Stratified train/test split");
  SplitArgs split_args;
  split->add_option("--dataset", split_args.dataset)->required();
  split->add_option("--ratio", split_args.ratio, "Train fraction")->capture_default_str();
  split->add_flag("--basic-strata", split_args.basic_strata, "Stratify by basic emotion");
  add_common(split, common);

  auto* report = app.add_subcommand("report", "Render the tables of a finished run");
  std::string report_manifest;
  report->add_option("manifest", report_manifest, "manifest.json or run directory")->required();

  auto* rerun_cmd = app.add_subcommand("rerun", "Re-run a manifest (live providers replay recorded fixtures)");
  std::string rerun_manifest;
  rerun_cmd->add_option("manifest", rerun_manifest, "manifest.json or run directory")->required();
  add_common(rerun_cmd, common);

  CLI11_PARSE(app, argc, argv);

  try {
    auto opt = options_of(common);
    if (*classify) {
      classify_args.variant = variant_of(classify_variant);
      if (!classify_platform.empty()) classify_args.platform = parse_platform(classify_platform);
      print_result(cmd_classify(classify_args, opt));
    } else if (*extract) {
      if (!extract_predictions.empty()) extract_args.predictions = extract_predictions;
      print_result(cmd_extract_causes(extract_args, opt));
    } else if (*evaluate) {
      eval_args.mode = eval_mode == "bleu" ? EvalMode::kBleu : EvalMode::kF1;
      eval_args.smoothing = smoothing == "none" ? Smoothing::kNone : Smoothing::kHalvedCount;
      eval_args.aggregation = aggregation == "corpus" ? BleuAggregation::kCorpus : BleuAggregation::kSentenceMean;
      eval_args.neutral = include_neutral ? NeutralPooling::kInclude : NeutralPooling::kExclude;
      auto r = cmd_evaluate(eval_args, opt);
      std::cout << detail::read_file(r.manifest_path.parent_path() / r.manifest["outputs"]["markdown"].get<std::string>());
    } else if (*mine) {
      if (!mine_comments.empty()) mine_args.comments = mine_comments;
      mine_args.variant = variant_of(mine_variant);
      mine_args.kinds = kinds_of(mine_kinds);
      auto r = cmd_mine(mine_args, opt);
      std::cout << detail::read_file(r.manifest_path.parent_path() / "cluster_report.md");
    } else if (*fetch) {
      fetch_args.kinds = kinds_of(fetch_kinds);
      print_result(cmd_fetch(fetch_args, opt));
    } else if (*sweep) {
      sweep_args.report_cell = {report_eps, report_min_pts};
      auto r = cmd_sweep(sweep_args, opt);
      std::cout << cmd_report(r.manifest_path).markdown;
    } else if (*import) {
      import_args.spec.platform = parse_platform(import_platform).value_or(Platform::kGitHub);
      import_args.spec.separator = import_sep;
      if (!import_flags.empty()) {
        for (auto& f : detail::split(import_flags, ',')) import_args.spec.flag_columns.push_back(detail::trim(f));
      }
      print_result(cmd_import(import_args, opt));
    } else if (*split) {
      print_result(cmd_split(split_args, opt));
    } else if (*report) {
      auto r = cmd_report(report_manifest);
      std::cout << r.markdown << '\n' << r.tsv;
    } else if (*rerun_cmd) {
      print_result(rerun(rerun_manifest, opt));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
