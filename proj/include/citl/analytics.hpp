#pragma once

// Result tables built from run records: per-cycle scores with gains and
// token columns, per-dimension breakdowns, score-vs-token series and the
// critique category distribution.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "citl/domain.hpp"
#include "citl/model_gateway.hpp"
#include "citl/prompt_kit.hpp"

namespace citl {

struct ReportOptions {
  bool include_judge_tokens = false;          // add judge tokens to the token column
  const std::vector<RunRecord>* distilled = nullptr;  // runs of a distilled generator, for the distilled row
};

struct CycleAggregate {
  std::string label;  // initial | cycle_<k> | best | refine_no_critic | distilled
  int n = 0;
  double mean = 0;
  std::optional<double> se;        // absent for n = 1
  std::optional<double> gain_pct;  // absent for the initial row
  double mean_cumulative_tokens = 0;
};

/// Throws EmptyInput when no run has a scored initial solution.
std::vector<CycleAggregate> cycle_report(const std::vector<RunRecord>& runs, const ReportOptions& options = {});

struct DimensionRow {
  std::string label;
  int n = 0;
  DimensionScores mean;
  std::optional<DimensionScores> change_pct;  // vs the initial row; absent for it
};

/// Throws EmptyInput, or MixedJudgeKinds when single-judge evaluations occur.
std::vector<DimensionRow> dimension_breakdown(const std::vector<RunRecord>& runs, const ReportOptions& options = {});

struct CategoryDistribution {
  std::map<CritiqueCategory, int> counts;  // every category present, possibly 0
  int total = 0;                           // classified critiques
  int unclassifiable = 0;
  int failed = 0;  // classifier calls that errored

  double percent(CritiqueCategory c) const;
};

struct ClassifiedCritique {
  std::string task_id;
  int cycle = 0;
  CritiqueKind kind = CritiqueKind::consolidated;
  std::optional<CritiqueCategory> category;
  std::string raw_response;
};

struct CritiqueRef {
  std::string task_id;
  Critique critique;
};

/// Critiques of the given kind across runs, in run order.
std::vector<CritiqueRef> collect_critiques(const std::vector<RunRecord>& runs, std::optional<CritiqueKind> kind);

/// One classifier call per critique. Throws EmptyInput for no critiques.
CategoryDistribution classify_critiques(const std::vector<CritiqueRef>& critiques, ModelGateway& gateway,
                                        std::shared_ptr<const EndpointConfig> endpoint, const PromptLibrary& prompts,
                                        int parallelism = 1, std::vector<ClassifiedCritique>* details = nullptr);

struct SeriesPoint {
  std::string label;
  double mean_cumulative_tokens = 0;
  double mean_overall = 0;
  bool best = false;
};

/// Initial and per-cycle points plus the best marker. Throws EmptyInput.
std::vector<SeriesPoint> score_vs_tokens(const std::vector<RunRecord>& runs, const ReportOptions& options = {});

/// Display names used in the markdown tables ("Initial code", "CITL: Cycle 1", ...).
std::string row_title(const std::string& label);

std::string format_cycle_table(const std::vector<CycleAggregate>& rows);
std::string format_dimension_table(const std::vector<DimensionRow>& rows);
std::string format_category_table(const CategoryDistribution& distribution);
std::string series_csv(const std::vector<SeriesPoint>& points);
std::string categories_csv(const CategoryDistribution& distribution);

nlohmann::json to_json(const CycleAggregate& row);
nlohmann::json to_json(const DimensionRow& row);
nlohmann::json to_json(const CategoryDistribution& distribution);
CategoryDistribution category_distribution_from_json(const nlohmann::json& doc);

/// Reads every <dir>/<task>/run.json, sorted by task directory name.
std::vector<RunRecord> load_runs(const std::filesystem::path& artifact_dir);

/// Writes report.json, report.md and series.csv (and categories.csv when a
/// distribution is given) into `out_dir`.
void write_report(const std::filesystem::path& out_dir, const std::vector<RunRecord>& runs,
                  const ReportOptions& options, const CategoryDistribution* categories = nullptr,
                  std::optional<std::uint64_t> seed = std::nullopt);

}  // namespace citl
