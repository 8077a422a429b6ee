#include "citl/cli.hpp"

#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "citl/analytics.hpp"
#include "citl/config.hpp"
#include "citl/corpus.hpp"
#include "citl/engine.hpp"
#include "citl/json_io.hpp"
#include "citl/judge_validation.hpp"
#include "citl/util.hpp"

namespace citl {

using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::string backend = "http";
  std::string out = "artifacts";
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  bool quiet = false;
};

// Shared state built once the command line is parsed.
class Context {
 public:
  Context(const Globals& g, std::ostream& out) : globals_(g), out_(out) {
    config_ = g.config_path.empty() ? default_config() : load_config(g.config_path);
    if (g.seed) config_.seed = *g.seed;
    config_.artifact_dir = g.out;
    prompts_ = config_.prompts_dir ? PromptLibrary::with_overrides(*config_.prompts_dir) : PromptLibrary();

    if (g.backend != "http" && !g.backend.starts_with("scripted:")) {
      throw ConfigError(fmt::format("unknown backend '{}' (expected http or scripted:<file>)", g.backend));
    }
  }

  GlobalConfig& config() { return config_; }
  const PromptLibrary& prompts() const { return prompts_; }
  ModelGateway& gateway() {
    if (gateway_) return *gateway_;
    GatewayOptions options;
    if (globals_.backend.starts_with("scripted:")) {
      backend_ = make_scripted_backend(load_script(globals_.backend.substr(9)));
      options.initial_backoff_seconds = 0;
    } else {
      for (const auto& [name, e] : config_.endpoints) {
        if (e->base_url.empty()) {
          throw ConfigError(fmt::format("endpoint {} has no base_url (use --config, or --backend scripted:<file>)",
                                        name));
        }
      }
      backend_ = std::make_shared<HttpChatBackend>();
    }
    gateway_ = std::make_unique<ModelGateway>(backend_, options);
    return *gateway_;
  }
  std::ostream& out() { return out_; }
  std::filesystem::path out_dir() const { return globals_.out; }

  PageRenderer& renderer() {
    if (!renderer_) renderer_ = std::make_unique<WebDriverRenderer>(config_.renderer);
    return *renderer_;
  }

  void print_seed() { out_ << fmt::format("# seed {}\n", config_.seed); }

 private:
  const Globals& globals_;
  std::ostream& out_;
  GlobalConfig config_;
  PromptLibrary prompts_;
  std::shared_ptr<ChatBackend> backend_;
  std::unique_ptr<ModelGateway> gateway_;
  std::unique_ptr<WebDriverRenderer> renderer_;
};

std::optional<Split> parse_split_filter(const std::string& text) {
  if (text == "all") return std::nullopt;
  return parse_split(text);
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
  std::string input;
  std::optional<int> train, validation, test, sample;
  std::optional<std::uint64_t> split_seed;
  bool model_filter = false;
};

int cmd_prepare(Context& ctx, const PrepareArgs& a) {
  auto& c = ctx.config();
  if (a.train) c.split.train = *a.train;
  if (a.validation) c.split.validation = *a.validation;
  if (a.test) c.split.test = *a.test;
  c.split.sample_size = a.sample.value_or(c.split.train + c.split.validation + c.split.test);
  if (a.split_seed) c.split.seed = *a.split_seed;
  c.split.validate();

  const auto records = load_raw_records(a.input);
  std::shared_ptr<const EndpointConfig> filter;
  if (a.model_filter) {
    filter = c.endpoint_for(Role::filter);
    if (!filter) throw ConfigError("--model-filter needs roles.filter in the config");
  }
  const auto filtered = ingest_and_filter(records, filter ? &ctx.gateway() : nullptr, filter);
  const auto parts = split(filtered.tasks, c.split);

  std::string log;
  for (const auto& d : filtered.decisions) {
    log += json{{"id", d.id}, {"kept", d.kept}, {"reason", d.reason}}.dump() + "\n";
  }
  write_file(ctx.out_dir() / "filter_log.jsonl", log);
  write_file(ctx.out_dir() / "tasks.jsonl", dump_tasks(parts.all()));
  ctx.out() << fmt::format("# split seed {}\n", c.split.seed);
  ctx.out() << fmt::format("records {} kept {} train {} validation {} test {}\n", records.size(),
                           filtered.tasks.size(), parts.train.size(), parts.validation.size(), parts.test.size());
  return k_exit_ok;
}

struct RunArgs {
  std::string tasks;
  std::string split = "all";
  std::optional<int> budget;
  std::string baseline;
  bool force = false;
  std::optional<int> parallelism;
  std::string judge;
  std::optional<int> limit;
};

int cmd_run(Context& ctx, const RunArgs& a) {
  auto& c = ctx.config();
  if (a.budget) c.budget_T = *a.budget;
  if (a.parallelism) c.parallelism = *a.parallelism;
  if (!a.judge.empty()) c.judge_kind = parse_judge_kind(a.judge);
  if (!a.baseline.empty() && a.baseline != "no-critic") {
    throw ConfigError(fmt::format("unknown --baseline '{}' (expected no-critic)", a.baseline));
  }
  c.validate();

  const auto tasks_path = a.tasks.empty() ? ctx.out_dir() / "tasks.jsonl" : std::filesystem::path(a.tasks);
  const auto wanted = parse_split_filter(a.split);
  std::vector<Task> tasks;
  int skipped = 0;
  for (auto& t : load_tasks(tasks_path)) {
    if (wanted && t.split != *wanted) continue;
    if (a.limit && static_cast<int>(tasks.size()) >= *a.limit) break;
    const auto dir = ctx.out_dir() / t.id;
    if (std::filesystem::exists(dir / "run.json")) {
      if (!a.force) {
        spdlog::warn("task {}: run exists, not overwriting (use --force)", t.id);
        ++skipped;
        continue;
      }
      std::filesystem::remove_all(dir);
    }
    tasks.push_back(std::move(t));
  }
  ctx.print_seed();
  if (tasks.empty()) {
    ctx.out() << fmt::format("no tasks to run ({} skipped)\n", skipped);
    return skipped ? k_exit_partial : k_exit_ok;
  }

  CitlEngine engine(ctx.gateway(), ctx.renderer(), ctx.prompts(), c.pipeline());
  const auto runs = engine.run_corpus(tasks, RunOptions{a.baseline == "no-critic"});
  int failed = 0;
  for (const auto& r : runs) {
    failed += r.failure ? 1 : 0;
    ctx.out() << fmt::format("{} cycles {} best_cycle {} best {} {}\n", r.task.id, r.cycles.size(), r.best_cycle,
                             r.best_overall ? format_score(*r.best_overall) : "-",
                             r.failure ? fmt::format("failed:{}@{}:{}", r.failure->stage, r.failure->cycle,
                                                     r.failure->kind)
                                       : "ok");
  }
  ctx.out() << fmt::format("runs {} failed {} skipped {}\n", runs.size(), failed, skipped);
  return failed || skipped ? k_exit_partial : k_exit_ok;
}

struct ValidateArgs {
  std::string pairs;
  std::string judge = "multi";
  std::optional<int> parallelism;
};

int cmd_validate(Context& ctx, const ValidateArgs& a) {
  auto& c = ctx.config();
  std::vector<JudgeKind> kinds;
  if (a.judge == "both") {
    kinds = {JudgeKind::multi, JudgeKind::single};
  } else {
    kinds = {parse_judge_kind(a.judge)};
  }
  int ties = 0;
  const auto pairs = load_pairs(a.pairs, &ties);
  if (pairs.empty()) throw ConfigError(fmt::format("{}: no non-tie pairs", a.pairs));

  std::vector<AgreementReport> reports;
  int excluded = 0;
  for (const auto kind : kinds) {
    c.judge_kind = kind;
    const auto results = judge_pairs({ctx.gateway(), ctx.renderer(), ctx.prompts()}, pairs, c.judge(), c.viewport,
                                     a.parallelism.value_or(c.parallelism));
    std::string lines;
    for (const auto& r : results) {
      json row = {{"pair_id", r.pair_id}};
      row["outcome"] = r.outcome ? json(to_string(*r.outcome)) : json();
      row["score_a"] = r.score_a ? json(*r.score_a) : json();
      row["score_b"] = r.score_b ? json(*r.score_b) : json();
      row["error"] = r.error ? json(*r.error) : json();
      lines += row.dump() + "\n";
    }
    auto report = agreement_stats(std::span<const PairResult>(results), kind);
    excluded += report.excluded;
    json doc = to_json(report);
    doc["skipped_ties"] = ties;
    write_file(ctx.out_dir() / fmt::format("agreement_{}.json", to_string(kind)), doc.dump(2) + "\n");
    write_file(ctx.out_dir() / fmt::format("agreement_{}_pairs.jsonl", to_string(kind)), lines);
    reports.push_back(report);
  }
  const auto table = format_agreement_table(reports);
  write_file(ctx.out_dir() / "agreement.md", table);
  ctx.out() << table;
  return excluded ? k_exit_partial : k_exit_ok;
}

struct ClassifyArgs {
  std::string artifacts;
  std::string kind = "consolidated";
  std::optional<int> parallelism;
};

int cmd_classify(Context& ctx, const ClassifyArgs& a) {
  const auto dir = a.artifacts.empty() ? ctx.out_dir() : std::filesystem::path(a.artifacts);
  const auto runs = load_runs(dir);
  const std::optional<CritiqueKind> kind =
      a.kind == "all" ? std::nullopt : std::optional(parse_critique_kind(a.kind));
  const auto critiques = collect_critiques(runs, kind);
  std::vector<ClassifiedCritique> details;
  const auto dist = classify_critiques(critiques, ctx.gateway(), ctx.config().endpoint_for(Role::classifier),
                                       ctx.prompts(), a.parallelism.value_or(ctx.config().parallelism), &details);
  std::string lines;
  for (const auto& d : details) {
    json row = {{"task_id", d.task_id}, {"cycle", d.cycle}, {"kind", to_string(d.kind)}};
    row["category"] = d.category ? json(to_string(*d.category)) : json();
    lines += row.dump() + "\n";
  }
  write_file(ctx.out_dir() / "classified.jsonl", lines);
  write_file(ctx.out_dir() / "categories.json", to_json(dist).dump(2) + "\n");
  write_file(ctx.out_dir() / "categories.csv", categories_csv(dist));
  ctx.out() << format_category_table(dist);
  return dist.failed ? k_exit_partial : k_exit_ok;
}

struct ExportArgs {
  std::string artifacts;
  std::string split = "train";
  bool wrapped = false;
  std::string pairs_out;
  std::string manifest;
};

int cmd_export(Context& ctx, const ExportArgs& a) {
  const auto dir = a.artifacts.empty() ? ctx.out_dir() : std::filesystem::path(a.artifacts);
  const auto runs = load_runs(dir);
  const auto exported = export_distillation(runs, parse_split_filter(a.split), a.wrapped || ctx.config().export_wrapped,
                                            ctx.prompts());
  const auto pairs_path = a.pairs_out.empty() ? ctx.out_dir() / "distill_pairs.jsonl" : std::filesystem::path(a.pairs_out);
  const auto manifest_path =
      a.manifest.empty() ? ctx.out_dir() / "distill_manifest.json" : std::filesystem::path(a.manifest);
  write_distillation(exported, pairs_path, manifest_path);
  ctx.out() << fmt::format("pairs {} skipped {}\n", exported.pairs.size(), exported.manifest.size());
  return k_exit_ok;
}

struct ReportArgs {
  std::string artifacts;
  std::string distilled;
  std::string categories;
  bool include_judge_tokens = false;
};

int cmd_report(Context& ctx, const ReportArgs& a) {
  const auto dir = a.artifacts.empty() ? ctx.out_dir() : std::filesystem::path(a.artifacts);
  const auto runs = load_runs(dir);
  if (runs.empty()) throw EmptyInput(fmt::format("no run.json under {}", dir.string()));
  std::vector<RunRecord> distilled;
  ReportOptions options;
  options.include_judge_tokens = a.include_judge_tokens;
  if (!a.distilled.empty()) {
    distilled = load_runs(a.distilled);
    options.distilled = &distilled;
  }
  std::optional<CategoryDistribution> categories;
  if (!a.categories.empty()) categories = category_distribution_from_json(json::parse(read_file(a.categories)));
  write_report(ctx.out_dir(), runs, options, categories ? &*categories : nullptr, runs.front().seed);
  ctx.out() << read_file(ctx.out_dir() / "report.md");
  return k_exit_ok;
}

struct RenderArgs {
  std::string html;
  std::string png;
  std::optional<int> width, height;
  bool viewport_only = false;
};

int cmd_render(Context& ctx, const RenderArgs& a) {
  Viewport v = ctx.config().viewport;
  if (a.width) v.width = *a.width;
  if (a.height) v.height = *a.height;
  if (a.viewport_only) v.full_page = false;
  if (v.max_page_height < v.height) v.max_page_height = v.height;
  const auto shot = ctx.renderer().render(read_file(a.html), v);
  const auto path = a.png.empty() ? ctx.out_dir() / "render.png" : std::filesystem::path(a.png);
  save_png(path, shot);
  ctx.out() << fmt::format("{} {}x{} blank {} {:.2f}s\n", path.string(), shot.width, shot.height,
                           shot.blank ? "yes" : "no", shot.render_latency);
  return k_exit_ok;
}

// Routes log output to the caller's error stream for the duration of a call.
class LogScope {
 public:
  LogScope(std::ostream& err, spdlog::level::level_enum level) : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
    sink->set_pattern("[%l] %v");
    auto logger = std::make_shared<spdlog::logger>("citl", sink);
    logger->set_level(level);
    spdlog::set_default_logger(logger);
  }
  ~LogScope() { spdlog::set_default_logger(previous_); }

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

}  // namespace

int execute(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Critic-in-the-loop webpage generation, judging and reporting", "citl"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--backend", g.backend, "http or scripted:<file>");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Override pipeline.seed");
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");
  app.add_flag("-q,--quiet", g.quiet, "Errors only");

  PrepareArgs prepare;
  auto* p = app.add_subcommand("prepare", "Filter raw requests and split them into tasks");
  p->add_option("--input", prepare.input, "Raw records (JSON lines)")->required()->check(CLI::ExistingFile);
  p->add_option("--train", prepare.train);
  p->add_option("--validation", prepare.validation);
  p->add_option("--test", prepare.test);
  p->add_option("--sample", prepare.sample, "Sample size (default: train + validation + test)");
  p->add_option("--split-seed", prepare.split_seed);
  p->add_flag("--model-filter", prepare.model_filter, "Classify website requests with the filter endpoint");

  RunArgs run;
  auto* r = app.add_subcommand("run", "Run the refinement loop over tasks");
  r->add_option("--tasks", run.tasks, "Tasks file (default <out>/tasks.jsonl)");
  r->add_option("--split", run.split, "train, validation, test or all")
      ->check(CLI::IsMember({"train", "validation", "test", "all"}));
  r->add_option("--budget", run.budget, "Iteration budget T")->check(CLI::NonNegativeNumber);
  r->add_option("--baseline", run.baseline, "Also run a baseline: no-critic")->check(CLI::IsMember({"no-critic"}));
  r->add_flag("--force", run.force, "Overwrite existing task runs");
  r->add_option("--parallelism", run.parallelism)->check(CLI::PositiveNumber);
  r->add_option("--judge", run.judge, "multi or single")->check(CLI::IsMember({"multi", "single"}));
  r->add_option("--limit", run.limit, "Run at most N tasks")->check(CLI::PositiveNumber);

  ValidateArgs validate;
  auto* v = app.add_subcommand("validate-judge", "Measure judge agreement with human preferences");
  v->add_option("--pairs", validate.pairs, "Preference pairs (JSON lines)")->required()->check(CLI::ExistingFile);
  v->add_option("--judge", validate.judge, "multi, single or both")
      ->check(CLI::IsMember({"multi", "single", "both"}));
  v->add_option("--parallelism", validate.parallelism)->check(CLI::PositiveNumber);

  ClassifyArgs classify;
  auto* c = app.add_subcommand("classify", "Classify critiques into categories");
  c->add_option("--artifacts", classify.artifacts, "Artifact directory (default --out)");
  c->add_option("--kind", classify.kind, "visual, consolidated or all")
      ->check(CLI::IsMember({"visual", "consolidated", "all"}));
  c->add_option("--parallelism", classify.parallelism)->check(CLI::PositiveNumber);

  ExportArgs exp;
  auto* e = app.add_subcommand("export-distill", "Export (task, best solution) pairs");
  e->add_option("--artifacts", exp.artifacts, "Artifact directory (default --out)");
  e->add_option("--split", exp.split, "train, validation, test or all")
      ->check(CLI::IsMember({"train", "validation", "test", "all"}));
  e->add_flag("--wrapped", exp.wrapped, "Use the full generator prompt as the prompt field");
  e->add_option("--pairs-out", exp.pairs_out);
  e->add_option("--manifest", exp.manifest);

  ReportArgs report;
  auto* rep = app.add_subcommand("report", "Write result tables and plot series");
  rep->add_option("--artifacts", report.artifacts, "Artifact directory (default --out)");
  rep->add_option("--distilled", report.distilled, "Artifact directory of a distilled-generator run");
  rep->add_option("--categories", report.categories, "categories.json from the classify command")
      ->check(CLI::ExistingFile);
  rep->add_flag("--include-judge-tokens", report.include_judge_tokens);

  RenderArgs render;
  auto* ro = app.add_subcommand("render-one", "Render one HTML file to PNG");
  ro->add_option("--html", render.html)->required()->check(CLI::ExistingFile);
  ro->add_option("--png", render.png, "Output PNG (default <out>/render.png)");
  ro->add_option("--width", render.width)->check(CLI::PositiveNumber);
  ro->add_option("--height", render.height)->check(CLI::PositiveNumber);
  ro->add_flag("--viewport-only", render.viewport_only, "Capture the viewport instead of the full page");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return k_exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return k_exit_ok;
  } catch (const CLI::RequiredError& ex) {
    // An unknown first word shows up as a missing subcommand.
    const bool unknown = argc > 1 && std::string_view(argv[argc - 1]).front() != '-' && app.get_subcommands().empty();
    err << (unknown ? fmt::format("unknown command '{}'", argv[argc - 1]) : std::string(ex.what())) << "\n" << app.help();
    return k_exit_config;
  } catch (const CLI::ParseError& ex) {
    err << ex.what() << "\n";
    return k_exit_config;
  }

  LogScope logs(err, g.verbose ? spdlog::level::debug : (g.quiet ? spdlog::level::err : spdlog::level::info));
  try {
    Context ctx(g, out);
    if (p->parsed()) return cmd_prepare(ctx, prepare);
    if (r->parsed()) return cmd_run(ctx, run);
    if (v->parsed()) return cmd_validate(ctx, validate);
    if (c->parsed()) return cmd_classify(ctx, classify);
    if (e->parsed()) return cmd_export(ctx, exp);
    if (rep->parsed()) return cmd_report(ctx, report);
    if (ro->parsed()) return cmd_render(ctx, render);
    throw UnknownCommand("no command given");
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << "\n";
    return k_exit_config;
  } catch (const UnknownCommand& ex) {
    err << ex.what() << "\n";
    return k_exit_config;
  } catch (const Error& ex) {
    err << ex.kind() << ": " << ex.what() << "\n";
    return k_exit_partial;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return k_exit_partial;
  }
}

int execute(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return execute(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace citl
