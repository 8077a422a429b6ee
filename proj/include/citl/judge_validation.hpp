#pragma once

// Agreement of a judge with human pairwise preferences: both solutions of a
// pair are rendered and scored independently, and the higher-scored one is
// compared with the human vote.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "citl/domain.hpp"
#include "citl/judge.hpp"
#include "citl/renderer.hpp"

namespace citl {

enum class Vote { prefers_a, prefers_b };
enum class Outcome { agreement, draw, disagreement };

std::string_view to_string(Outcome o);

struct PreferencePair {
  std::string id;
  Task task;
  Solution solution_a;
  Solution solution_b;
  Vote human_vote = Vote::prefers_a;
};

/// Reads JSON lines with task_text, code_a, code_b and winner ("a" | "b" |
/// "tie"/"both"/"neither"); an optional id names the pair. Tie rows are
/// skipped (the count is returned through `skipped_ties`).
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path, int* skipped_ties = nullptr);
std::vector<PreferencePair> parse_pairs(std::string_view text, int* skipped_ties = nullptr);

/// Compares full-precision scores against the vote.
Outcome compare_scores(double score_a, double score_b, Vote vote);

struct PairResult {
  std::string pair_id;
  std::optional<Outcome> outcome;  // absent when either side failed to score
  std::optional<double> score_a;
  std::optional<double> score_b;
  std::optional<std::string> error;
};

struct ValidationServices {
  ModelGateway& gateway;
  PageRenderer& renderer;
  const PromptLibrary& prompts;
};

PairResult judge_pair(ValidationServices services, const PreferencePair& pair, const JudgeConfig& config,
                      const Viewport& viewport = {});

/// judge_pair over all pairs with up to `parallelism` workers, in input order.
std::vector<PairResult> judge_pairs(ValidationServices services, const std::vector<PreferencePair>& pairs,
                                    const JudgeConfig& config, const Viewport& viewport, int parallelism);

struct AgreementReport {
  JudgeKind judge_kind = JudgeKind::multi;
  int n = 0;
  int agreement = 0;
  int draw = 0;
  int disagreement = 0;
  int excluded = 0;  // pairs that could not be judged

  double agreement_pct() const;
  double draw_pct() const;
  double disagreement_pct() const;
};

/// Throws EmptyInput for no outcomes.
AgreementReport agreement_stats(std::span<const Outcome> outcomes, JudgeKind kind);

/// Tallies the judged results; failed pairs count as excluded.
AgreementReport agreement_stats(std::span<const PairResult> results, JudgeKind kind);

nlohmann::json to_json(const AgreementReport& report);

/// Markdown table with one column per report (e.g. multi and single).
std::string format_agreement_table(std::span<const AgreementReport> reports);

}  // namespace citl
