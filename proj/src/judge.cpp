#include "citl/judge.hpp"

#include <future>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace citl {

void JudgeConfig::validate() const {
  if (!endpoint) throw ConfigError("judge endpoint is not set");
  if (!endpoint->multimodal) {
    throw ConfigError(fmt::format("judge endpoint {} must be multimodal", endpoint->name));
  }
  if (max_parse_retries < 0) throw ConfigError("judge max_parse_retries must be >= 0");
}

bool is_parse_error(const Error& error) {
  static const std::set<std::string, std::less<>> kinds = {
      "NoCodeBlock", "TagNotFound", "MalformedSummary", "ScoreOutOfRange", "MissingDimension", "NotANumber",
  };
  return kinds.contains(error.kind());
}

namespace {

std::string task_block(const Task& task) { return fmt::format("<user_request>\n{}\n</user_request>", task.text); }

std::string code_block(const Solution& solution) { return fmt::format("```html\n{}\n```", solution.html); }

template <typename T>
struct Judged {
  T value;
  std::vector<std::string> transcripts;
  TokenUsage tokens;
  int attempts = 0;
};

// Sends the same request until `parse` succeeds or retries run out.
template <typename Parse>
auto call_with_retries(ModelGateway& gateway, const ModelRequest& request, int max_retries, std::string_view what,
                       Parse parse) -> Judged<decltype(parse(std::string_view{}))> {
  Judged<decltype(parse(std::string_view{}))> out{};
  std::string last_error;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    ModelResponse response;
    try {
      response = gateway.complete(request);
    } catch (const ScriptExhausted& e) {
      // a scripted run with no reply left for the retry
      if (attempt == 0) throw;
      throw EvaluationFailed(fmt::format("{} output unparseable ({}); no reply for retry: {}", what, last_error, e.what()));
    }
    ++out.attempts;
    out.tokens += response.tokens;
    out.transcripts.push_back(response.text);
    try {
      out.value = parse(response.text);
      return out;
    } catch (const Error& e) {
      if (!is_parse_error(e)) throw;
      last_error = fmt::format("{}: {}", e.kind(), e.what());
      spdlog::debug("{} unparseable (attempt {}): {}", what, attempt + 1, last_error);
    }
  }
  throw EvaluationFailed(fmt::format("{} output unparseable after {} attempt(s): {}", what, out.attempts, last_error));
}

}  // namespace

Evaluation judge_multidim(JudgeServices services, const Task& task, const Solution& solution,
                          const Screenshot& screenshot, const JudgeConfig& config, std::string_view ledger_key) {
  ModelRequest code_request;
  code_request.system_text = std::string(services.prompts.body(TemplateId::judge_code));
  code_request.user_parts = {ContentPart::from_text(task_block(task)), ContentPart::from_text(code_block(solution))};
  code_request.endpoint = config.endpoint;
  code_request.role = Role::judge;
  code_request.ledger_key = std::string(ledger_key);

  ModelRequest visual_request;
  visual_request.system_text = std::string(services.prompts.body(TemplateId::judge_visual));
  visual_request.user_parts = {ContentPart::from_text(task_block(task)), ContentPart::from_image(screenshot.png)};
  visual_request.endpoint = config.endpoint;
  visual_request.role = Role::judge;
  visual_request.ledger_key = std::string(ledger_key);

  using Pair = std::pair<double, double>;
  auto code_future = std::async(std::launch::async, [&] {
    return call_with_retries(services.gateway, code_request, config.max_parse_retries, "code judge",
                             [](std::string_view text) -> Pair {
                               return parse_judge_summary(strip_reasoning(text),
                                                          {JudgeDimension::task_accomplishment,
                                                           JudgeDimension::code_quality});
                             });
  });
  std::optional<Judged<Pair>> visual;
  std::exception_ptr visual_error;
  try {
    visual = call_with_retries(services.gateway, visual_request, config.max_parse_retries, "visual judge",
                               [](std::string_view text) -> Pair {
                                 return parse_judge_summary(strip_reasoning(text),
                                                            {JudgeDimension::task_accomplishment,
                                                             JudgeDimension::aesthetic_quality});
                               });
  } catch (...) {
    visual_error = std::current_exception();
  }
  auto code = code_future.get();  // rethrows the code judge's failure first
  if (visual_error) std::rethrow_exception(visual_error);

  Evaluation evaluation;
  evaluation.judge_kind = JudgeKind::multi;
  evaluation.dims = DimensionScores{code.value.first, code.value.second, visual->value.first, visual->value.second};
  evaluation.overall = overall_score(*evaluation.dims);
  evaluation.transcripts = code.transcripts;
  evaluation.transcripts.insert(evaluation.transcripts.end(), visual->transcripts.begin(), visual->transcripts.end());
  evaluation.judge_tokens = code.tokens + visual->tokens;
  evaluation.attempts = code.attempts + visual->attempts;
  return evaluation;
}

Evaluation judge_singledim(JudgeServices services, const Task& task, const Solution& solution,
                           const Screenshot& screenshot, const JudgeConfig& config, std::string_view ledger_key) {
  ModelRequest request;
  request.user_parts = {
      ContentPart::from_text(services.prompts.render(
          TemplateId::judge_single, {{"problem", task.text}, {"answer", solution.html}})),
      ContentPart::from_image(screenshot.png),
  };
  request.endpoint = config.endpoint;
  request.role = Role::judge;
  request.ledger_key = std::string(ledger_key);

  auto judged = call_with_retries(services.gateway, request, config.max_parse_retries, "single judge",
                                  [](std::string_view text) { return parse_single_score(strip_reasoning(text)); });
  Evaluation evaluation;
  evaluation.judge_kind = JudgeKind::single;
  evaluation.overall = judged.value;
  evaluation.transcripts = std::move(judged.transcripts);
  evaluation.judge_tokens = judged.tokens;
  evaluation.attempts = judged.attempts;
  return evaluation;
}

Evaluation evaluate(JudgeServices services, const Task& task, const Solution& solution, const Screenshot& screenshot,
                    const JudgeConfig& config, std::string_view ledger_key) {
  if (config.kind == JudgeKind::single) {
    return judge_singledim(services, task, solution, screenshot, config, ledger_key);
  }
  return judge_multidim(services, task, solution, screenshot, config, ledger_key);
}

}  // namespace citl
