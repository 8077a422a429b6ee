#include "citl/engine.hpp"

#include <atomic>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "citl/json_io.hpp"
#include "citl/util.hpp"

namespace citl {

void PipelineConfig::resolve() {
  if (!generator) throw ConfigError("pipeline: generator endpoint is not set");
  if (!visual_critic) throw ConfigError("pipeline: visual critic endpoint is not set");
  if (!visual_critic->multimodal) {
    throw ConfigError(fmt::format("pipeline: visual critic endpoint {} must be multimodal", visual_critic->name));
  }
  if (!code_critic) code_critic = generator;
  if (!improver) improver = generator;
  if (!judge.endpoint) judge.endpoint = visual_critic;
  judge.validate();
  if (budget_T < 0) throw ConfigError("pipeline: budget_T must be >= 0");
  if (task_parallelism < 1) throw ConfigError("pipeline: task_parallelism must be >= 1");
  if (stage_parse_retries < 0) throw ConfigError("pipeline: stage_parse_retries must be >= 0");
  viewport.validate();
  for (const auto* e : {&generator, &visual_critic, &code_critic, &improver, &judge.endpoint}) (*e)->validate();
}

CitlEngine::CitlEngine(ModelGateway& gateway, PageRenderer& renderer, const PromptLibrary& prompts,
                       PipelineConfig config)
    : gateway_(gateway), renderer_(renderer), prompts_(prompts), config_(std::move(config)) {
  config_.resolve();
}

std::filesystem::path CitlEngine::task_dir(const Task& task) const { return config_.artifact_dir / task.id; }

void CitlEngine::persist_text(const Task& task, const std::string& name, std::string_view text) const {
  if (config_.artifact_dir.empty()) return;
  write_file(task_dir(task) / name, text);
}

std::string CitlEngine::call_stage(const std::string& stage, int cycle, ModelRequest request, TokenUsage& tokens,
                                   const std::function<std::string(std::string_view)>& parse) {
  std::string last;
  for (int attempt = 0; attempt <= config_.stage_parse_retries; ++attempt) {
    ModelResponse response;
    try {
      response = gateway_.complete(request);
    } catch (const Error& e) {
      throw StageFailed(stage, cycle, e.what(), e.kind());
    }
    tokens += response.tokens;
    try {
      return parse(response.text);
    } catch (const Error& e) {
      if (!is_parse_error(e)) throw StageFailed(stage, cycle, e.what(), e.kind());
      last = e.kind();
      spdlog::debug("{} cycle {}: unparseable output ({}), attempt {}", stage, cycle, e.what(), attempt + 1);
      if (attempt == config_.stage_parse_retries) throw StageFailed(stage, cycle, e.what(), e.kind());
    }
  }
  throw StageFailed(stage, cycle, "no attempts made", last);
}

namespace {

std::string parse_code(std::string_view text) { return extract_html(strip_reasoning(text)); }

std::string parse_critique(std::string_view text) { return extract_tagged(strip_reasoning(text), "critique"); }

ModelRequest text_request(std::string prompt, std::shared_ptr<const EndpointConfig> endpoint, Role role,
                          std::string ledger_key) {
  ModelRequest request;
  request.user_parts.push_back(ContentPart::from_text(std::move(prompt)));
  request.endpoint = std::move(endpoint);
  request.role = role;
  request.ledger_key = std::move(ledger_key);
  return request;
}

StageFailure to_failure(const StageFailed& e) { return {e.stage(), e.cycle(), e.cause(), e.what()}; }

StageFailed as_exception(const StageFailure& f) { return StageFailed(f.stage, f.cycle, f.message, f.kind); }

}  // namespace

CitlEngine::Rendered CitlEngine::render_and_score(const Task& task, Solution solution, const std::string& stem) {
  Rendered out;
  persist_text(task, stem + ".html", solution.html);
  Screenshot shot;
  try {
    shot = renderer_.render(solution.html, config_.viewport);
  } catch (const Error& e) {
    out.failure = StageFailure{"render", solution.cycle, e.kind(), e.what()};
    out.scored.solution = std::move(solution);
    return out;
  }
  if (!config_.artifact_dir.empty()) save_png(task_dir(task) / (stem + ".png"), shot);
  out.scored.screenshot = ScreenshotRef{stem + ".png", shot.width, shot.height, shot.blank};
  try {
    out.scored.evaluation =
        evaluate({gateway_, prompts_}, task, solution, shot, config_.judge, judge_ledger_key(task));
  } catch (const Error& e) {
    spdlog::warn("task {} cycle {}: evaluation failed: {}", task.id, solution.cycle, e.what());
    out.scored.evaluation_error = fmt::format("{}: {}", e.kind(), e.what());
  }
  out.scored.solution = std::move(solution);
  out.screenshot = std::move(shot);
  return out;
}

RunRecord CitlEngine::run_task(const Task& task, const RunOptions& options) {
  RunRecord record;
  record.task = task;
  record.seed = config_.seed;
  const std::string ledger = pipeline_ledger_key(task);

  auto consider_best = [&](const ScoredSolution& scored) {
    if (!scored.evaluation) return;
    if (!record.best_overall || scored.evaluation->overall >= *record.best_overall) {
      record.best_overall = scored.evaluation->overall;
      record.best_cycle = scored.solution.cycle;
    }
  };
  auto add_judge_tokens = [&](const ScoredSolution& scored) {
    if (scored.evaluation) record.judge_tokens += scored.evaluation->judge_tokens;
  };

  std::optional<Screenshot> current_shot;
  try {
    // y_0 = G(x)
    Solution y0;
    y0.task_id = task.id;
    y0.cycle = 0;
    y0.producer = config_.generator_is_distilled ? Producer::distilled : Producer::generator;
    y0.html = call_stage("generate", 0,
                         text_request(prompts_.render(TemplateId::generator, {{"problem", task.text}}),
                                      config_.generator, Role::generator, ledger),
                         y0.tokens, parse_code);
    record.cumulative_tokens_per_cycle.push_back(y0.tokens.total());

    auto rendered = render_and_score(task, std::move(y0), "cycle_0");
    record.initial = std::move(rendered.scored);
    if (rendered.failure) throw as_exception(*rendered.failure);
    current_shot = std::move(rendered.screenshot);
    consider_best(*record.initial);
    add_judge_tokens(*record.initial);

    for (int t = 0; t < config_.budget_T; ++t) {
      const Solution& yt = t == 0 ? record.initial->solution : record.cycles.back().result.solution;
      CycleRecord cycle;
      cycle.cycle = t;

      // v_t = V(x, R(y_t)), reusing the evaluation screenshot
      cycle.visual_critique.kind = CritiqueKind::visual;
      cycle.visual_critique.cycle = t;
      {
        auto request = text_request(prompts_.render(TemplateId::visual_critic, {{"problem", task.text}}),
                                    config_.visual_critic, Role::visual_critic, ledger);
        request.user_parts.push_back(ContentPart::from_image(current_shot->png));
        cycle.visual_critique.text =
            call_stage("visual_critique", t, std::move(request), cycle.visual_critique.tokens, parse_critique);
      }
      persist_text(task, fmt::format("critique_{}_visual.txt", t), cycle.visual_critique.text);

      // c_t = C(x, y_t, v_t)
      cycle.consolidated_critique.kind = CritiqueKind::consolidated;
      cycle.consolidated_critique.cycle = t;
      cycle.consolidated_critique.text = call_stage(
          "code_critique", t,
          text_request(prompts_.render(TemplateId::code_critic, {{"problem", task.text},
                                                                 {"answer", yt.html},
                                                                 {"visual_feedback", cycle.visual_critique.text}}),
                       config_.code_critic, Role::code_critic, ledger),
          cycle.consolidated_critique.tokens, parse_critique);
      persist_text(task, fmt::format("critique_{}_consolidated.txt", t), cycle.consolidated_critique.text);

      // y_{t+1} = I(x, y_t, c_t)
      Solution next;
      next.task_id = task.id;
      next.cycle = t + 1;
      next.producer = Producer::improver;
      next.html = call_stage("improve", t + 1,
                             text_request(prompts_.render(TemplateId::improver,
                                                          {{"problem", task.text},
                                                           {"answer", yt.html},
                                                           {"critique", cycle.consolidated_critique.text}}),
                                          config_.improver, Role::improver, ledger),
                             next.tokens, parse_code);
      const std::int64_t spent =
          cycle.visual_critique.tokens.total() + cycle.consolidated_critique.tokens.total() + next.tokens.total();
      const std::int64_t cumulative = record.cumulative_tokens_per_cycle.back() + spent;

      auto rendered = render_and_score(task, std::move(next), fmt::format("cycle_{}", t + 1));
      cycle.result = std::move(rendered.scored);
      if (rendered.failure) {
        record.cycles.push_back(std::move(cycle));
        record.cumulative_tokens_per_cycle.push_back(cumulative);
        throw as_exception(*rendered.failure);
      }
      current_shot = std::move(rendered.screenshot);
      consider_best(cycle.result);
      add_judge_tokens(cycle.result);
      record.cycles.push_back(std::move(cycle));
      record.cumulative_tokens_per_cycle.push_back(cumulative);
    }
  } catch (const StageFailed& e) {
    spdlog::warn("task {}: {} failed at cycle {}: {}", task.id, e.stage(), e.cycle(), e.what());
    record.failure = to_failure(e);
  }

  if (options.baseline_no_critic && record.initial) {
    try {
      record.baseline = refine_without_critic(task, record.initial->solution);
      record.baseline_cumulative_tokens =
          record.cumulative_tokens_per_cycle.front() + record.baseline->solution.tokens.total();
      add_judge_tokens(*record.baseline);
    } catch (const StageFailed& e) {
      spdlog::warn("task {}: baseline {} failed: {}", task.id, e.stage(), e.what());
      if (!record.failure) record.failure = to_failure(e);
    }
  }

  if (!config_.artifact_dir.empty()) write_file(task_dir(task) / "run.json", dump_run_record(record));
  return record;
}

ScoredSolution CitlEngine::refine_without_critic(const Task& task, const Solution& initial) {
  Solution refined;
  refined.task_id = task.id;
  refined.cycle = 1;
  refined.producer = Producer::refiner_no_critic;
  refined.html = call_stage(
      "refine", 1,
      text_request(prompts_.render(TemplateId::refine_no_critic, {{"problem", task.text}, {"answer", initial.html}}),
                   config_.generator, Role::improver, task.id + "/baseline"),
      refined.tokens, parse_code);
  auto rendered = render_and_score(task, std::move(refined), "refine_no_critic");
  if (rendered.failure) throw StageFailed("refine", 1, rendered.failure->message, rendered.failure->kind);
  return std::move(rendered.scored);
}

std::vector<RunRecord> CitlEngine::run_corpus(const std::vector<Task>& tasks, const RunOptions& options) {
  if (tasks.empty()) throw EmptyInput("run_corpus: no tasks");
  std::vector<RunRecord> results(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        results[i] = run_task(tasks[i], options);
      } catch (const std::exception& e) {
        spdlog::error("task {}: {}", tasks[i].id, e.what());
        results[i].task = tasks[i];
        results[i].seed = config_.seed;
        results[i].failure = StageFailure{"internal", 0, "InternalError", e.what()};
      }
    }
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config_.task_parallelism), tasks.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  return results;
}

}  // namespace citl
