#pragma once

// Shared vocabulary of the refinement pipeline: tasks, solutions, critiques,
// evaluations and the per-task audit trail, plus the score arithmetic that
// every report is built on.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "citl/error.hpp"

namespace citl {

using TaskId = std::string;

enum class Split { train, validation, test, unassigned };
enum class Producer { generator, improver, refiner_no_critic, distilled };
enum class JudgeKind { multi, single };
enum class CritiqueKind { visual, consolidated };

std::string_view to_string(Split s);
std::string_view to_string(Producer p);
std::string_view to_string(JudgeKind k);
std::string_view to_string(CritiqueKind k);
Split parse_split(std::string_view text);
Producer parse_producer(std::string_view text);
JudgeKind parse_judge_kind(std::string_view text);
CritiqueKind parse_critique_kind(std::string_view text);

struct Task {
  TaskId id;
  std::string text;
  Split split = Split::unassigned;
};

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  // Set when the provider omitted usage metadata and the count was estimated.
  bool estimated = false;

  std::int64_t total() const { return prompt_tokens + completion_tokens; }

  TokenUsage& operator+=(const TokenUsage& other) {
    prompt_tokens += other.prompt_tokens;
    completion_tokens += other.completion_tokens;
    estimated = estimated || other.estimated;
    return *this;
  }
  friend TokenUsage operator+(TokenUsage a, const TokenUsage& b) { return a += b; }
  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

struct Solution {
  TaskId task_id;
  int cycle = 0;
  std::string html;
  Producer producer = Producer::generator;
  TokenUsage tokens;
};

inline constexpr double k_min_score = 1.0;
inline constexpr double k_max_score = 10.0;

struct DimensionScores {
  double code_task = 0;
  double code_quality = 0;
  double visual_task = 0;
  double aesthetic = 0;
};

struct Evaluation {
  std::optional<DimensionScores> dims;  // absent for single-dimensional judging
  double overall = 0;
  JudgeKind judge_kind = JudgeKind::multi;
  std::vector<std::string> transcripts;
  TokenUsage judge_tokens;
  int attempts = 1;  // judge calls issued, parse retries included
};

struct Critique {
  CritiqueKind kind = CritiqueKind::visual;
  std::string text;
  int cycle = 0;
  TokenUsage tokens;
};

struct ScreenshotRef {
  std::string path;  // relative to the task's artifact directory
  int width = 0;
  int height = 0;
  bool blank = false;
};

/// One solution together with its render and (optional) score. An absent
/// evaluation means the judge failed; such a solution can never become best.
struct ScoredSolution {
  Solution solution;
  std::optional<ScreenshotRef> screenshot;
  std::optional<Evaluation> evaluation;
  std::optional<std::string> evaluation_error;
};

/// Critique of y_t (both critiques carry `cycle`) producing y_{t+1}
/// (`result.solution.cycle == cycle + 1`).
struct CycleRecord {
  int cycle = 0;
  Critique visual_critique;
  Critique consolidated_critique;
  ScoredSolution result;
};

struct StageFailure {
  std::string stage;  // generate | render | evaluate | visual_critique | code_critique | improve | refine
  int cycle = 0;
  std::string kind;
  std::string message;
};

struct RunRecord {
  Task task;
  std::optional<ScoredSolution> initial;
  std::vector<CycleRecord> cycles;
  int best_cycle = 0;
  std::optional<double> best_overall;
  std::vector<std::int64_t> cumulative_tokens_per_cycle;
  TokenUsage judge_tokens;
  std::optional<StageFailure> failure;
  std::optional<ScoredSolution> baseline;  // refine-without-critic result, when run
  std::int64_t baseline_cumulative_tokens = 0;
  std::uint64_t seed = 0;

  /// A run is usable when it produced and scored an initial solution.
  bool succeeded() const { return initial && best_overall.has_value(); }

  /// Solution at a cycle index (0 = initial), if that cycle completed.
  const ScoredSolution* solution_at(int cycle) const;
  const ScoredSolution* best() const { return best_overall ? solution_at(best_cycle) : nullptr; }
};

/// Raised by a pipeline stage; the engine turns it into a StageFailure.
class StageFailed : public Error {
 public:
  StageFailed(std::string stage, int cycle, const std::string& message, std::string cause = "StageFailed")
      : Error("StageFailed", message), stage_(std::move(stage)), cycle_(cycle), cause_(std::move(cause)) {}
  const std::string& stage() const noexcept { return stage_; }
  int cycle() const noexcept { return cycle_; }
  /// Kind of the underlying error (e.g. NoCodeBlock, TransportError).
  const std::string& cause() const noexcept { return cause_; }

 private:
  std::string stage_;
  int cycle_;
  std::string cause_;
};

// ---------------------------------------------------------------------------
// Score arithmetic. Values are kept at full precision; rounding happens only
// in the format_* helpers used by report emitters.

/// Arithmetic mean of the four dimensions. Throws InvalidScore when any value
/// lies outside [1, 10].
double overall_score(const DimensionScores& dims);

/// 100 * (current - baseline) / baseline. Throws InvalidBaseline for
/// baseline <= 0.
double relative_gain(double baseline, double current);

struct MeanSe {
  double mean = 0;
  double se = 0;
};

/// Mean and standard error (sample sd with n-1, divided by sqrt(n)).
/// Throws InsufficientData for fewer than two values.
MeanSe mean_and_se(std::span<const double> values);

double mean(std::span<const double> values);

bool in_score_range(double value);

std::string format_score(double value);        // 3 dp
std::string format_gain(double percent);       // signed, 1 dp
std::string format_percent(double percent);    // 1 dp

}  // namespace citl
