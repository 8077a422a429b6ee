#include "citl/json_io.hpp"

namespace citl {

namespace {

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& value) {
  if (value) {
    j[key] = *value;
  } else {
    j[key] = nullptr;
  }
}

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& out) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    out.reset();
  } else {
    out = it->get<T>();
  }
}

}  // namespace

void to_json(json& j, const Task& v) {
  j = json{{"id", v.id}, {"text", v.text}, {"split", to_string(v.split)}};
}
void from_json(const json& j, Task& v) {
  v.id = j.at("id").get<std::string>();
  v.text = j.at("text").get<std::string>();
  v.split = parse_split(j.value("split", std::string("unassigned")));
}

void to_json(json& j, const TokenUsage& v) {
  j = json{{"prompt_tokens", v.prompt_tokens},
           {"completion_tokens", v.completion_tokens},
           {"estimated", v.estimated}};
}
void from_json(const json& j, TokenUsage& v) {
  v.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
  v.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
  v.estimated = j.value("estimated", false);
}

void to_json(json& j, const Solution& v) {
  j = json{{"task_id", v.task_id},
           {"cycle", v.cycle},
           {"html", v.html},
           {"producer", to_string(v.producer)},
           {"tokens", v.tokens}};
}
void from_json(const json& j, Solution& v) {
  v.task_id = j.at("task_id").get<std::string>();
  v.cycle = j.at("cycle").get<int>();
  v.html = j.at("html").get<std::string>();
  v.producer = parse_producer(j.at("producer").get<std::string>());
  v.tokens = j.at("tokens").get<TokenUsage>();
}

void to_json(json& j, const DimensionScores& v) {
  j = json{{"code_task", v.code_task},
           {"code_quality", v.code_quality},
           {"visual_task", v.visual_task},
           {"aesthetic", v.aesthetic}};
}
void from_json(const json& j, DimensionScores& v) {
  v.code_task = j.at("code_task").get<double>();
  v.code_quality = j.at("code_quality").get<double>();
  v.visual_task = j.at("visual_task").get<double>();
  v.aesthetic = j.at("aesthetic").get<double>();
}

void to_json(json& j, const Evaluation& v) {
  j = json{{"overall", v.overall},
           {"judge_kind", to_string(v.judge_kind)},
           {"transcripts", v.transcripts},
           {"judge_tokens", v.judge_tokens},
           {"attempts", v.attempts}};
  put_optional(j, "dims", v.dims);
}
void from_json(const json& j, Evaluation& v) {
  get_optional(j, "dims", v.dims);
  v.overall = j.at("overall").get<double>();
  v.judge_kind = parse_judge_kind(j.at("judge_kind").get<std::string>());
  v.transcripts = j.at("transcripts").get<std::vector<std::string>>();
  v.judge_tokens = j.at("judge_tokens").get<TokenUsage>();
  v.attempts = j.value("attempts", 1);
}

void to_json(json& j, const Critique& v) {
  j = json{{"kind", to_string(v.kind)}, {"text", v.text}, {"cycle", v.cycle}, {"tokens", v.tokens}};
}
void from_json(const json& j, Critique& v) {
  v.kind = parse_critique_kind(j.at("kind").get<std::string>());
  v.text = j.at("text").get<std::string>();
  v.cycle = j.at("cycle").get<int>();
  v.tokens = j.at("tokens").get<TokenUsage>();
}

void to_json(json& j, const ScreenshotRef& v) {
  j = json{{"path", v.path}, {"width", v.width}, {"height", v.height}, {"blank", v.blank}};
}
void from_json(const json& j, ScreenshotRef& v) {
  v.path = j.at("path").get<std::string>();
  v.width = j.at("width").get<int>();
  v.height = j.at("height").get<int>();
  v.blank = j.at("blank").get<bool>();
}

void to_json(json& j, const ScoredSolution& v) {
  j = json{{"solution", v.solution}};
  put_optional(j, "screenshot", v.screenshot);
  put_optional(j, "evaluation", v.evaluation);
  put_optional(j, "evaluation_error", v.evaluation_error);
}
void from_json(const json& j, ScoredSolution& v) {
  v.solution = j.at("solution").get<Solution>();
  get_optional(j, "screenshot", v.screenshot);
  get_optional(j, "evaluation", v.evaluation);
  get_optional(j, "evaluation_error", v.evaluation_error);
}

void to_json(json& j, const CycleRecord& v) {
  j = json{{"cycle", v.cycle},
           {"visual_critique", v.visual_critique},
           {"consolidated_critique", v.consolidated_critique},
           {"result", v.result}};
}
void from_json(const json& j, CycleRecord& v) {
  v.cycle = j.at("cycle").get<int>();
  v.visual_critique = j.at("visual_critique").get<Critique>();
  v.consolidated_critique = j.at("consolidated_critique").get<Critique>();
  v.result = j.at("result").get<ScoredSolution>();
}

void to_json(json& j, const StageFailure& v) {
  j = json{{"stage", v.stage}, {"cycle", v.cycle}, {"kind", v.kind}, {"message", v.message}};
}
void from_json(const json& j, StageFailure& v) {
  v.stage = j.at("stage").get<std::string>();
  v.cycle = j.at("cycle").get<int>();
  v.kind = j.at("kind").get<std::string>();
  v.message = j.at("message").get<std::string>();
}

void to_json(json& j, const RunRecord& v) {
  j = json{{"task", v.task},
           {"cycles", v.cycles},
           {"best_cycle", v.best_cycle},
           {"cumulative_tokens_per_cycle", v.cumulative_tokens_per_cycle},
           {"judge_tokens", v.judge_tokens},
           {"baseline_cumulative_tokens", v.baseline_cumulative_tokens},
           {"seed", v.seed},
           {"schema", "citl.run/1"}};
  put_optional(j, "initial", v.initial);
  put_optional(j, "best_overall", v.best_overall);
  put_optional(j, "failure", v.failure);
  put_optional(j, "baseline", v.baseline);
}
void from_json(const json& j, RunRecord& v) {
  v.task = j.at("task").get<Task>();
  get_optional(j, "initial", v.initial);
  v.cycles = j.at("cycles").get<std::vector<CycleRecord>>();
  v.best_cycle = j.at("best_cycle").get<int>();
  get_optional(j, "best_overall", v.best_overall);
  v.cumulative_tokens_per_cycle = j.at("cumulative_tokens_per_cycle").get<std::vector<std::int64_t>>();
  v.judge_tokens = j.at("judge_tokens").get<TokenUsage>();
  get_optional(j, "failure", v.failure);
  get_optional(j, "baseline", v.baseline);
  v.baseline_cumulative_tokens = j.value("baseline_cumulative_tokens", std::int64_t{0});
  v.seed = j.value("seed", std::uint64_t{0});
}

std::string dump_run_record(const RunRecord& run) { return json(run).dump(2) + "\n"; }

RunRecord parse_run_record(std::string_view text) {
  return json::parse(text.begin(), text.end()).get<RunRecord>();
}

}  // namespace citl
