#include <doctest.h>

#include <random>

#include "citl/engine.hpp"
#include "citl/json_io.hpp"
#include "citl/util.hpp"
#include "support.hpp"

using namespace citl;
using namespace citl::testing;

namespace {

constexpr TokenUsage k_gen{100, 400, false};
constexpr TokenUsage k_vis{300, 50, false};
constexpr TokenUsage k_code{500, 60, false};
constexpr TokenUsage k_imp{700, 450, false};
constexpr TokenUsage k_judge{80, 20, false};

ScriptEntry entry(std::vector<std::string> m, std::string text, TokenUsage u) { return {std::move(m), std::move(text), u, {}}; }

// A full scripted run: scores[k] is the overall score of solution k (all four
// dims equal), std::nullopt for an unparseable judge reply.
std::vector<ScriptEntry> run_script(const std::string& task, const std::vector<std::optional<double>>& scores) {
  std::vector<ScriptEntry> s;
  s.push_back(entry({k_match_generator, task}, html_reply(task + " v0"), k_gen));
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (k > 0) {
      const int t = static_cast<int>(k) - 1;
      s.push_back(entry({k_match_visual_critic, task}, critique_reply(fmt::format("visual note {}", t)), k_vis));
      s.push_back(entry({k_match_code_critic, task}, critique_reply(fmt::format("code note {}", t)), k_code));
      s.push_back(entry({k_match_improver, task}, html_reply(fmt::format("{} v{}", task, k)), k_imp));
    }
    if (scores[k]) {
      s.push_back(entry({k_match_judge_code, task}, code_judge_reply(*scores[k], *scores[k]), k_judge));
      s.push_back(entry({k_match_judge_visual, task}, visual_judge_reply(*scores[k], *scores[k]), k_judge));
    } else {
      for (int r = 0; r < 2; ++r) s.push_back(entry({k_match_judge_code, task}, "no summary", k_judge));
      s.push_back(entry({k_match_judge_visual, task}, visual_judge_reply(5, 5), k_judge));
    }
  }
  return s;
}

PipelineConfig config(int T, std::filesystem::path dir = {}) {
  PipelineConfig c;
  c.generator = endpoint("gen", false);
  c.visual_critic = endpoint("vis", true);
  c.budget_T = T;
  c.artifact_dir = std::move(dir);
  c.viewport = Viewport{320, 200, false, 4000};
  return c;
}

struct Harness {
  std::shared_ptr<ScriptedBackend> backend;
  ModelGateway gateway;
  FakeRenderer renderer;
  CitlEngine engine;

  Harness(std::vector<ScriptEntry> script, PipelineConfig cfg)
      : backend(make_scripted_backend(std::move(script))),
        gateway(backend),
        engine(gateway, renderer, builtin_prompts(), std::move(cfg)) {}
};

// argmax with the latest index winning ties; -1 when nothing was scored
int brute_force_best(const std::vector<std::optional<double>>& scores) {
  int best = -1;
  for (int k = 0; k < static_cast<int>(scores.size()); ++k) {
    if (scores[k] && (best < 0 || *scores[k] >= *scores[best])) best = k;
  }
  return best;
}

}  // namespace

TEST_CASE("budget zero keeps only the initial solution") {
  Harness h(run_script("todo", {5.0}), config(0));
  const auto r = h.engine.run_task({"t", "todo", Split::test});
  CHECK(r.succeeded());
  CHECK(r.best_cycle == 0);
  CHECK(r.cycles.empty());
  CHECK(*r.best_overall == 5.0);
  CHECK(r.cumulative_tokens_per_cycle == std::vector<std::int64_t>{500});
  CHECK(h.renderer.renders() == 1);
}

TEST_CASE("best of 5.0, 5.6, 5.4, 5.7 is cycle 3") {
  Harness h(run_script("todo", {5.0, 5.6, 5.4, 5.7}), config(3));
  const auto r = h.engine.run_task({"t", "todo", Split::test});
  CHECK(r.best_cycle == 3);
  CHECK(*r.best_overall == doctest::Approx(5.7));
  CHECK(r.cycles.size() == 3);
  int evaluations = r.initial->evaluation ? 1 : 0;
  for (const auto& c : r.cycles) {
    evaluations += c.result.evaluation ? 1 : 0;
    CHECK(c.visual_critique.kind == CritiqueKind::visual);
    CHECK(c.consolidated_critique.kind == CritiqueKind::consolidated);
    CHECK(c.result.solution.cycle == c.cycle + 1);
    CHECK(c.result.solution.producer == Producer::improver);
  }
  CHECK(evaluations == 4);
  CHECK(r.cycles[1].visual_critique.text == "visual note 1");
  CHECK(h.renderer.renders() == 4);
  CHECK(h.backend->remaining() == 0);
}

TEST_CASE("ties go to the later cycle") {
  Harness h(run_script("todo", {6.0, 6.0}), config(1));
  CHECK(h.engine.run_task({"t", "todo", Split::test}).best_cycle == 1);
}

TEST_CASE("best cycle matches a brute-force argmax on random sequences") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    const int T = static_cast<int>(rng() % 6);
    std::vector<std::optional<double>> scores;
    for (int k = 0; k <= T; ++k) {
      if (k > 0 && rng() % 7 == 0) {
        scores.push_back(std::nullopt);
      } else {
        scores.push_back(1.0 + static_cast<double>(rng() % 19) * 0.5);
      }
    }
    Harness h(run_script("page", scores), config(T));
    const auto r = h.engine.run_task({"t", "page", Split::test});
    CAPTURE(trial);
    const int expected = brute_force_best(scores);
    CHECK(r.best_cycle == expected);
    CHECK(*r.best_overall == *scores[expected]);
    // s_best never decreases along the run
    double running = 0;
    for (int k = 0; k <= T; ++k) {
      const auto* s = r.solution_at(k);
      REQUIRE(s != nullptr);
      CHECK(s->evaluation.has_value() == scores[k].has_value());
      if (s->evaluation) running = std::max(running, s->evaluation->overall);
    }
    CHECK(running == *r.best_overall);
  }
}

TEST_CASE("token accounting") {
  Harness h(run_script("todo", {5.0, 5.5, 6.0}), config(2));
  const Task task{"t", "todo", Split::test};
  const auto r = h.engine.run_task(task);
  const std::int64_t per_cycle = k_vis.total() + k_code.total() + k_imp.total();
  CHECK(r.cumulative_tokens_per_cycle ==
        std::vector<std::int64_t>{k_gen.total(), k_gen.total() + per_cycle, k_gen.total() + 2 * per_cycle});
  CHECK(r.judge_tokens.total() == 3 * 2 * k_judge.total());
  CHECK(h.gateway.ledger(CitlEngine::pipeline_ledger_key(task)).total() == r.cumulative_tokens_per_cycle.back());
  CHECK(h.gateway.ledger(CitlEngine::judge_ledger_key(task)) == r.judge_tokens);
  CHECK(h.gateway.ledger_total().total() == r.cumulative_tokens_per_cycle.back() + r.judge_tokens.total());
}

TEST_CASE("critic prompts see the right inputs") {
  Harness h(run_script("todo", {5.0, 5.5}), config(1));
  h.engine.run_task({"t", "todo", Split::test});
  for (const auto& x : h.backend->transcript()) {
    if (x.request_text.find(k_match_visual_critic) != std::string::npos) {
      CHECK(x.request_text.find("[image/png") != std::string::npos);
      CHECK(x.request_text.find("todo v0") == std::string::npos);
    }
    if (x.request_text.find(k_match_code_critic) != std::string::npos) {
      CHECK(x.request_text.find("todo v0") != std::string::npos);
      CHECK(x.request_text.find("visual note 0") != std::string::npos);
    }
    if (x.request_text.find(k_match_improver) != std::string::npos) {
      CHECK(x.request_text.find("todo v0") != std::string::npos);
      CHECK(x.request_text.find("code note 0") != std::string::npos);
      CHECK(x.request_text.find("visual note 0") == std::string::npos);
    }
  }
}

TEST_CASE("unparseable improver output is retried once, then the run halts") {
  auto script = run_script("todo", {5.0});
  script.push_back(entry({k_match_visual_critic}, critique_reply("v"), k_vis));
  script.push_back(entry({k_match_code_critic}, critique_reply("c"), k_code));
  script.push_back(entry({k_match_improver}, "sorry, no code", k_imp));
  script.push_back(entry({k_match_improver}, "still no code", k_imp));
  Harness h(std::move(script), config(3));
  const auto r = h.engine.run_task({"t", "todo", Split::test});
  REQUIRE(r.failure.has_value());
  CHECK(r.failure->stage == "improve");
  CHECK(r.failure->cycle == 1);
  CHECK(r.failure->kind == "NoCodeBlock");
  CHECK(r.cycles.empty());
  CHECK(r.succeeded());
  CHECK(r.best_cycle == 0);
}

TEST_CASE("a retry that succeeds keeps the run going") {
  auto script = run_script("todo", {5.0, 6.0});
  // put a bad improver reply ahead of the good one
  auto it = std::find_if(script.begin(), script.end(),
                         [](const ScriptEntry& e) { return e.matchers[0] == k_match_improver; });
  script.insert(it, entry({k_match_improver}, "oops", k_imp));
  Harness h(std::move(script), config(1));
  const auto r = h.engine.run_task({"t", "todo", Split::test});
  CHECK_FALSE(r.failure.has_value());
  CHECK(r.best_cycle == 1);
  CHECK(r.cycles[0].result.solution.tokens.total() == 2 * k_imp.total());
}

TEST_CASE("generation failure leaves an unsuccessful record") {
  Harness h({entry({k_match_generator}, "no html", k_gen), entry({k_match_generator}, "no html", k_gen)}, config(3));
  const auto r = h.engine.run_task({"t", "todo", Split::test});
  CHECK_FALSE(r.succeeded());
  REQUIRE(r.failure);
  CHECK(r.failure->stage == "generate");
  CHECK(r.failure->cycle == 0);
  CHECK(r.best() == nullptr);
}

TEST_CASE("transport failure at a critic ends the run with best so far") {
  auto script = run_script("todo", {5.0, 7.0});
  auto it = std::find_if(script.begin(), script.end(),
                         [](const ScriptEntry& e) { return e.matchers[0] == k_match_code_critic; });
  it->failure = ScriptEntry::Failure::policy;
  Harness h(std::move(script), config(1));
  const auto r = h.engine.run_task({"t", "todo", Split::test});
  REQUIRE(r.failure);
  CHECK(r.failure->stage == "code_critique");
  CHECK(r.failure->kind == "PolicyError");
  CHECK(*r.best_overall == 5.0);
}

TEST_CASE("render failure ends the run") {
  auto script = run_script("todo", {5.0});
  script.push_back(entry({k_match_visual_critic}, critique_reply("v"), k_vis));
  script.push_back(entry({k_match_code_critic}, critique_reply("c"), k_code));
  script.push_back(entry({k_match_improver}, html_reply("FAILRENDER"), k_imp));
  Harness h(std::move(script), config(3));
  const auto r = h.engine.run_task({"t", "todo", Split::test});
  REQUIRE(r.failure);
  CHECK(r.failure->stage == "render");
  CHECK(r.failure->cycle == 1);
  CHECK(r.failure->kind == "RenderTimeout");
  REQUIRE(r.cycles.size() == 1);
  CHECK_FALSE(r.cycles[0].result.evaluation.has_value());
  CHECK(r.best_cycle == 0);
}

TEST_CASE("refine without critic") {
  auto script = run_script("todo", {5.0});
  script.push_back(entry({k_match_refine}, html_reply("refined"), TokenUsage{600, 300, false}));
  script.push_back(entry({k_match_judge_code}, code_judge_reply(6, 6), k_judge));
  script.push_back(entry({k_match_judge_visual}, visual_judge_reply(6, 6), k_judge));
  Harness h(std::move(script), config(0));
  const auto r = h.engine.run_task({"t", "todo", Split::test}, RunOptions{true});
  REQUIRE(r.baseline);
  CHECK(r.baseline->solution.producer == Producer::refiner_no_critic);
  CHECK(r.baseline->solution.cycle == 1);
  CHECK(r.baseline->evaluation->overall == 6.0);
  CHECK(r.baseline_cumulative_tokens == k_gen.total() + 900);
  CHECK(r.judge_tokens.total() == 4 * k_judge.total());
  CHECK(h.gateway.ledger("t/baseline").total() == 900);
  // no critiques produced on this path
  for (const auto& x : h.backend->transcript()) {
    CHECK(x.request_text.find(k_match_visual_critic) == std::string::npos);
  }
}

TEST_CASE("refine response without a fence") {
  Harness h({entry({k_match_refine}, "no fence", {}), entry({k_match_refine}, "no fence", {})}, config(0));
  const Solution initial{"t", 0, "<p>x</p>", Producer::generator, {}};
  try {
    h.engine.refine_without_critic({"t", "todo", Split::test}, initial);
    FAIL("expected StageFailed");
  } catch (const StageFailed& e) {
    CHECK(e.stage() == "refine");
    CHECK(e.cycle() == 1);
  }
}

TEST_CASE("run_corpus keeps input order and isolates failures") {
  std::vector<Task> tasks;
  std::vector<ScriptEntry> script;
  for (int i = 0; i < 5; ++i) {
    tasks.push_back({fmt::format("task{}", i), fmt::format("site number {}", i), Split::test});
    if (i == 2) {
      script.push_back(entry({k_match_generator, "site number 2"}, "nope", k_gen));
      script.push_back(entry({k_match_generator, "site number 2"}, "nope", k_gen));
      continue;
    }
    auto part = run_script(tasks.back().text, {5.0 + i * 0.1, 5.5 + i * 0.1});
    script.insert(script.end(), part.begin(), part.end());
  }
  auto cfg = config(1);
  cfg.task_parallelism = 2;
  Harness h(std::move(script), cfg);
  const auto records = h.engine.run_corpus(tasks);
  REQUIRE(records.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(records[i].task.id == tasks[i].id);
    CHECK(records[i].succeeded() == (i != 2));
  }
  CHECK(records[2].failure->stage == "generate");
  CHECK(*records[4].best_overall == doctest::Approx(5.9));
  CHECK_THROWS_AS(h.engine.run_corpus({}), EmptyInput);
}

TEST_CASE("artifacts are written and reproducible") {
  const auto base = std::filesystem::temp_directory_path() / "citl_engine_artifacts";
  std::filesystem::remove_all(base);
  auto run_into = [&](const std::string& name) {
    std::vector<Task> tasks;
    std::vector<ScriptEntry> script;
    for (int i = 0; i < 3; ++i) {
      tasks.push_back({fmt::format("t{}", i), fmt::format("shop {}", i), Split::test});
      auto part = run_script(tasks.back().text, {4.0, 4.5, 4.25});
      script.insert(script.end(), part.begin(), part.end());
    }
    auto cfg = config(2, base / name);
    cfg.task_parallelism = 3;
    Harness h(std::move(script), cfg);
    h.engine.run_corpus(tasks);
  };
  run_into("a");
  run_into("b");
  const auto dir = base / "a" / "t1";
  for (const char* f : {"run.json", "cycle_0.html", "cycle_0.png", "cycle_2.png", "critique_0_visual.txt",
                        "critique_1_consolidated.txt"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  int files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(base / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto other = base / "b" / std::filesystem::relative(e.path(), base / "a");
    CAPTURE(other.string());
    REQUIRE(std::filesystem::exists(other));
    CHECK(read_file(e.path()) == read_file(other));
  }
  CHECK(files == 3 * 11);
  const auto rec = parse_run_record(read_file(dir / "run.json"));
  CHECK(rec.best_cycle == 1);
  CHECK(rec.initial->screenshot->path == "cycle_0.png");
  std::filesystem::remove_all(base);
}

TEST_CASE("config resolution") {
  auto c = config(3);
  c.resolve();
  CHECK(c.code_critic == c.generator);
  CHECK(c.improver == c.generator);
  CHECK(c.judge.endpoint == c.visual_critic);
  auto bad = config(-1);
  CHECK_THROWS_AS(bad.resolve(), ConfigError);
  auto text_only = config(1);
  text_only.visual_critic = endpoint("v", false);
  CHECK_THROWS_AS(text_only.resolve(), ConfigError);
}

TEST_CASE("distilled generator tags its solutions") {
  auto cfg = config(0);
  cfg.generator_is_distilled = true;
  Harness h(run_script("todo", {5.0}), cfg);
  CHECK(h.engine.run_task({"t", "todo", Split::test}).initial->solution.producer == Producer::distilled);
}
