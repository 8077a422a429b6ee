#pragma once

// JSON schema of the run artifacts (run.json and friends). Keys are emitted
// in sorted order so identical records always serialize to identical bytes.

#include <json.hpp>

#include "citl/domain.hpp"

namespace citl {

using json = nlohmann::json;

void to_json(json& j, const Task& v);
void from_json(const json& j, Task& v);
void to_json(json& j, const TokenUsage& v);
void from_json(const json& j, TokenUsage& v);
void to_json(json& j, const Solution& v);
void from_json(const json& j, Solution& v);
void to_json(json& j, const DimensionScores& v);
void from_json(const json& j, DimensionScores& v);
void to_json(json& j, const Evaluation& v);
void from_json(const json& j, Evaluation& v);
void to_json(json& j, const Critique& v);
void from_json(const json& j, Critique& v);
void to_json(json& j, const ScreenshotRef& v);
void from_json(const json& j, ScreenshotRef& v);
void to_json(json& j, const ScoredSolution& v);
void from_json(const json& j, ScoredSolution& v);
void to_json(json& j, const CycleRecord& v);
void from_json(const json& j, CycleRecord& v);
void to_json(json& j, const StageFailure& v);
void from_json(const json& j, StageFailure& v);
void to_json(json& j, const RunRecord& v);
void from_json(const json& j, RunRecord& v);

/// Canonical text form of a run record (2-space indent, trailing newline).
std::string dump_run_record(const RunRecord& run);
RunRecord parse_run_record(std::string_view text);

}  // namespace citl
