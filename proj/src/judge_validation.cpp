#include "citl/judge_validation.hpp"

#include <atomic>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "citl/util.hpp"

namespace citl {

using nlohmann::json;

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::agreement: return "agreement";
    case Outcome::draw: return "draw";
    case Outcome::disagreement: return "disagreement";
  }
  return "?";
}

std::vector<PreferencePair> parse_pairs(std::string_view text, int* skipped_ties) {
  std::vector<PreferencePair> pairs;
  int ties = 0;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    const auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const json row = json::parse(line, nullptr, false);
    if (!row.is_object()) throw ConfigError(fmt::format("pairs line {}: not a JSON object", line_no));
    const auto field = [&](const char* key) {
      if (!row.contains(key) || !row[key].is_string()) {
        throw ConfigError(fmt::format("pairs line {}: missing string field '{}'", line_no, key));
      }
      return row[key].get<std::string>();
    };
    const std::string winner = to_lower(trim(field("winner")));
    if (winner == "tie" || winner == "both" || winner == "neither" || winner == "draw") {
      ++ties;
      continue;
    }
    PreferencePair pair;
    pair.id = row.contains("id") ? (row["id"].is_string() ? row["id"].get<std::string>() : row["id"].dump())
                                 : fmt::format("pair_{:04}", line_no);
    pair.task = Task{pair.id, field("task_text"), Split::unassigned};
    pair.solution_a = Solution{pair.id, 0, field("code_a"), Producer::generator, {}};
    pair.solution_b = Solution{pair.id, 0, field("code_b"), Producer::generator, {}};
    if (winner == "a" || winner == "model_a") {
      pair.human_vote = Vote::prefers_a;
    } else if (winner == "b" || winner == "model_b") {
      pair.human_vote = Vote::prefers_b;
    } else {
      throw ConfigError(fmt::format("pairs line {}: unknown winner '{}'", line_no, winner));
    }
    pairs.push_back(std::move(pair));
  }
  if (skipped_ties) *skipped_ties = ties;
  return pairs;
}

std::vector<PreferencePair> load_pairs(const std::filesystem::path& path, int* skipped_ties) {
  return parse_pairs(read_file(path), skipped_ties);
}

Outcome compare_scores(double score_a, double score_b, Vote vote) {
  if (score_a == score_b) return Outcome::draw;
  const bool judge_prefers_a = score_a > score_b;
  return judge_prefers_a == (vote == Vote::prefers_a) ? Outcome::agreement : Outcome::disagreement;
}

PairResult judge_pair(ValidationServices services, const PreferencePair& pair, const JudgeConfig& config,
                      const Viewport& viewport) {
  PairResult result;
  result.pair_id = pair.id;
  const auto score = [&](const Solution& solution, const char* side) -> std::optional<double> {
    try {
      const auto shot = services.renderer.render(solution.html, viewport);
      const auto evaluation = evaluate({services.gateway, services.prompts}, pair.task, solution, shot, config,
                                       fmt::format("validation/{}/{}", pair.id, side));
      return evaluation.overall;
    } catch (const Error& e) {
      result.error = fmt::format("solution {}: {}: {}", side, e.kind(), e.what());
      spdlog::warn("pair {} excluded: {}", pair.id, *result.error);
      return std::nullopt;
    }
  };
  result.score_a = score(pair.solution_a, "a");
  if (!result.score_a) return result;
  result.score_b = score(pair.solution_b, "b");
  if (!result.score_b) return result;
  result.outcome = compare_scores(*result.score_a, *result.score_b, pair.human_vote);
  return result;
}

std::vector<PairResult> judge_pairs(ValidationServices services, const std::vector<PreferencePair>& pairs,
                                    const JudgeConfig& config, const Viewport& viewport, int parallelism) {
  std::vector<PairResult> results(pairs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < pairs.size(); i = next++) results[i] = judge_pair(services, pairs[i], config, viewport);
  };
  const auto workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(parallelism, 1)), 1,
                                               std::max<std::size_t>(pairs.size(), 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  return results;
}

namespace {
double pct(int count, int n) { return n == 0 ? 0.0 : 100.0 * count / n; }
}  // namespace

double AgreementReport::agreement_pct() const { return pct(agreement, n); }
double AgreementReport::draw_pct() const { return pct(draw, n); }
double AgreementReport::disagreement_pct() const { return pct(disagreement, n); }

AgreementReport agreement_stats(std::span<const Outcome> outcomes, JudgeKind kind) {
  if (outcomes.empty()) throw EmptyInput("agreement_stats: no outcomes");
  AgreementReport report;
  report.judge_kind = kind;
  for (const auto o : outcomes) {
    switch (o) {
      case Outcome::agreement: ++report.agreement; break;
      case Outcome::draw: ++report.draw; break;
      case Outcome::disagreement: ++report.disagreement; break;
    }
  }
  report.n = static_cast<int>(outcomes.size());
  return report;
}

AgreementReport agreement_stats(std::span<const PairResult> results, JudgeKind kind) {
  std::vector<Outcome> outcomes;
  int excluded = 0;
  for (const auto& r : results) {
    if (r.outcome) {
      outcomes.push_back(*r.outcome);
    } else {
      ++excluded;
    }
  }
  auto report = agreement_stats(outcomes, kind);
  report.excluded = excluded;
  return report;
}

json to_json(const AgreementReport& report) {
  return {
      {"judge_kind", to_string(report.judge_kind)},
      {"n", report.n},
      {"excluded", report.excluded},
      {"agreement", {{"count", report.agreement}, {"percent", format_percent(report.agreement_pct())}}},
      {"draw", {{"count", report.draw}, {"percent", format_percent(report.draw_pct())}}},
      {"disagreement", {{"count", report.disagreement}, {"percent", format_percent(report.disagreement_pct())}}},
  };
}

std::string format_agreement_table(std::span<const AgreementReport> reports) {
  std::string header = "| Outcome |";
  std::string rule = "|---|";
  for (const auto& r : reports) {
    header += r.judge_kind == JudgeKind::multi ? " Multi-dimensional |" : " Single-dimensional |";
    rule += "---:|";
  }
  std::string out = header + "\n" + rule + "\n";
  const auto row = [&](const char* label, double (AgreementReport::*get)() const) {
    out += fmt::format("| {} |", label);
    for (const auto& r : reports) out += fmt::format(" {}% |", format_percent((r.*get)()));
    out += "\n";
  };
  row("Agreement", &AgreementReport::agreement_pct);
  row("Draw", &AgreementReport::draw_pct);
  row("Disagreement", &AgreementReport::disagreement_pct);
  out += "| Pairs judged |";
  for (const auto& r : reports) out += fmt::format(" {} |", r.n);
  out += "\n";
  return out;
}

}  // namespace citl
