#include "citl/domain.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace citl {

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::pair<Enum, std::string_view> (&table)[N],
                std::string_view what) {
  for (const auto& [value, name] : table) {
    if (name == text) return value;
  }
  throw Error("ParseError", fmt::format("unknown {} '{}'", what, text));
}

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum value, const std::pair<Enum, std::string_view> (&table)[N]) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "?";
}

constexpr std::pair<Split, std::string_view> k_splits[] = {
    {Split::train, "train"},
    {Split::validation, "validation"},
    {Split::test, "test"},
    {Split::unassigned, "unassigned"},
};
constexpr std::pair<Producer, std::string_view> k_producers[] = {
    {Producer::generator, "generator"},
    {Producer::improver, "improver"},
    {Producer::refiner_no_critic, "refiner_no_critic"},
    {Producer::distilled, "distilled"},
};
constexpr std::pair<JudgeKind, std::string_view> k_judge_kinds[] = {
    {JudgeKind::multi, "multi"},
    {JudgeKind::single, "single"},
};
constexpr std::pair<CritiqueKind, std::string_view> k_critique_kinds[] = {
    {CritiqueKind::visual, "visual"},
    {CritiqueKind::consolidated, "consolidated"},
};

}  // namespace

std::string_view to_string(Split s) { return enum_name(s, k_splits); }
std::string_view to_string(Producer p) { return enum_name(p, k_producers); }
std::string_view to_string(JudgeKind k) { return enum_name(k, k_judge_kinds); }
std::string_view to_string(CritiqueKind k) { return enum_name(k, k_critique_kinds); }
Split parse_split(std::string_view t) { return parse_enum(t, k_splits, "split"); }
Producer parse_producer(std::string_view t) { return parse_enum(t, k_producers, "producer"); }
JudgeKind parse_judge_kind(std::string_view t) { return parse_enum(t, k_judge_kinds, "judge kind"); }
CritiqueKind parse_critique_kind(std::string_view t) {
  return parse_enum(t, k_critique_kinds, "critique kind");
}

const ScoredSolution* RunRecord::solution_at(int cycle) const {
  if (cycle == 0) return initial ? &*initial : nullptr;
  for (const auto& c : cycles) {
    if (c.result.solution.cycle == cycle) return &c.result;
  }
  return nullptr;
}

bool in_score_range(double value) {
  return std::isfinite(value) && value >= k_min_score && value <= k_max_score;
}

double overall_score(const DimensionScores& dims) {
  const double values[] = {dims.code_task, dims.code_quality, dims.visual_task, dims.aesthetic};
  for (double v : values) {
    if (!in_score_range(v)) {
      throw InvalidScore(fmt::format("dimension score {} outside [1, 10]", v));
    }
  }
  return (values[0] + values[1] + values[2] + values[3]) / 4.0;
}

double relative_gain(double baseline, double current) {
  if (!(baseline > 0)) {
    throw InvalidBaseline(fmt::format("baseline must be positive, got {}", baseline));
  }
  return 100.0 * (current - baseline) / baseline;
}

double mean(std::span<const double> values) {
  if (values.empty()) throw EmptyInput("mean of an empty list");
  double sum = 0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

MeanSe mean_and_se(std::span<const double> values) {
  if (values.size() < 2) {
    throw InsufficientData(fmt::format("standard error needs at least 2 values, got {}", values.size()));
  }
  const double m = mean(values);
  double ss = 0;
  for (double v : values) ss += (v - m) * (v - m);
  const auto n = static_cast<double>(values.size());
  const double sd = std::sqrt(ss / (n - 1.0));
  return {m, sd / std::sqrt(n)};
}

std::string format_score(double value) { return fmt::format("{:.3f}", value); }

std::string format_gain(double percent) {
  std::string s = fmt::format("{:+.1f}", percent);
  if (s == "-0.0") s = "+0.0";
  return s;
}

std::string format_percent(double percent) { return fmt::format("{:.1f}", percent); }

}  // namespace citl
