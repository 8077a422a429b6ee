#include "citl/analytics.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "citl/json_io.hpp"
#include "citl/util.hpp"

namespace citl {

using nlohmann::json;

namespace {

const Evaluation* evaluation_at(const RunRecord& run, int cycle) {
  const auto* s = run.solution_at(cycle);
  return s && s->evaluation ? &*s->evaluation : nullptr;
}

std::int64_t judge_tokens_through(const RunRecord& run, int cycle) {
  std::int64_t total = 0;
  for (int c = 0; c <= cycle; ++c) {
    if (const auto* e = evaluation_at(run, c)) total += e->judge_tokens.total();
  }
  return total;
}

std::int64_t tokens_through(const RunRecord& run, int cycle, const ReportOptions& options) {
  const auto& cum = run.cumulative_tokens_per_cycle;
  if (cum.empty()) return 0;
  std::int64_t t = cum[static_cast<std::size_t>(std::min<int>(cycle, static_cast<int>(cum.size()) - 1))];
  if (options.include_judge_tokens) t += judge_tokens_through(run, cycle);
  return t;
}

int max_cycle(const std::vector<RunRecord>& runs) {
  int k = 0;
  for (const auto& r : runs) k = std::max(k, static_cast<int>(r.cycles.size()));
  return k;
}

// One collected row before aggregation.
template <typename V>
struct Samples {
  std::string label;
  std::vector<V> values;
  std::vector<double> tokens;
};

// Visits every (label, run) contribution in table order.
template <typename Pick>
auto gather(const std::vector<RunRecord>& runs, const ReportOptions& options, Pick pick)
    -> std::vector<Samples<decltype(pick(std::declval<const Evaluation&>()))>> {
  using V = decltype(pick(std::declval<const Evaluation&>()));
  std::vector<Samples<V>> rows;
  const auto add = [&](std::string label, auto&& each) {
    Samples<V> s{std::move(label), {}, {}};
    each(s);
    if (!s.values.empty() || s.label == "initial") rows.push_back(std::move(s));
  };
  add("initial", [&](Samples<V>& s) {
    for (const auto& r : runs) {
      if (const auto* e = evaluation_at(r, 0)) {
        s.values.push_back(pick(*e));
        s.tokens.push_back(static_cast<double>(tokens_through(r, 0, options)));
      }
    }
  });
  for (int k = 1; k <= max_cycle(runs); ++k) {
    add(fmt::format("cycle_{}", k), [&](Samples<V>& s) {
      for (const auto& r : runs) {
        if (const auto* e = evaluation_at(r, k)) {
          s.values.push_back(pick(*e));
          s.tokens.push_back(static_cast<double>(tokens_through(r, k, options)));
        }
      }
    });
  }
  add("best", [&](Samples<V>& s) {
    for (const auto& r : runs) {
      if (!r.succeeded()) continue;
      if (const auto* e = evaluation_at(r, r.best_cycle)) {
        s.values.push_back(pick(*e));
        s.tokens.push_back(static_cast<double>(tokens_through(r, r.best_cycle, options)));
      }
    }
  });
  add("refine_no_critic", [&](Samples<V>& s) {
    for (const auto& r : runs) {
      if (!r.baseline || !r.baseline->evaluation) continue;
      s.values.push_back(pick(*r.baseline->evaluation));
      std::int64_t t = r.baseline_cumulative_tokens;
      if (options.include_judge_tokens) {
        t += judge_tokens_through(r, 0) + r.baseline->evaluation->judge_tokens.total();
      }
      s.tokens.push_back(static_cast<double>(t));
    }
  });
  if (options.distilled) {
    add("distilled", [&](Samples<V>& s) {
      for (const auto& r : *options.distilled) {
        if (const auto* e = evaluation_at(r, 0)) {
          s.values.push_back(pick(*e));
          s.tokens.push_back(static_cast<double>(tokens_through(r, 0, options)));
        }
      }
    });
  }
  if (rows.empty() || rows.front().values.empty()) throw EmptyInput("no run has a scored initial solution");
  return rows;
}

}  // namespace

std::vector<CycleAggregate> cycle_report(const std::vector<RunRecord>& runs, const ReportOptions& options) {
  const auto rows = gather(runs, options, [](const Evaluation& e) { return e.overall; });
  std::vector<CycleAggregate> out;
  double initial_mean = 0;
  for (const auto& s : rows) {
    CycleAggregate a;
    a.label = s.label;
    a.n = static_cast<int>(s.values.size());
    if (a.n >= 2) {
      const auto ms = mean_and_se(s.values);
      a.mean = ms.mean;
      a.se = ms.se;
    } else {
      a.mean = mean(s.values);
    }
    a.mean_cumulative_tokens = mean(s.tokens);
    if (s.label == "initial") {
      initial_mean = a.mean;
    } else {
      a.gain_pct = relative_gain(initial_mean, a.mean);
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<DimensionRow> dimension_breakdown(const std::vector<RunRecord>& runs, const ReportOptions& options) {
  const auto check = [](const std::vector<RunRecord>& rs) {
    for (const auto& r : rs) {
      const auto visit = [](const std::optional<ScoredSolution>& s) {
        if (s && s->evaluation && s->evaluation->judge_kind != JudgeKind::multi) {
          throw MixedJudgeKinds("dimension breakdown needs multi-dimensional evaluations only");
        }
      };
      visit(r.initial);
      visit(r.baseline);
      for (const auto& c : r.cycles) visit(c.result);
    }
  };
  check(runs);
  if (options.distilled) check(*options.distilled);

  const auto rows = gather(runs, options, [](const Evaluation& e) { return *e.dims; });
  std::vector<DimensionRow> out;
  DimensionScores initial;
  for (const auto& s : rows) {
    DimensionRow row;
    row.label = s.label;
    row.n = static_cast<int>(s.values.size());
    const auto avg = [&](double DimensionScores::*field) {
      std::vector<double> v;
      for (const auto& d : s.values) v.push_back(d.*field);
      return mean(v);
    };
    row.mean = {avg(&DimensionScores::code_task), avg(&DimensionScores::code_quality),
                avg(&DimensionScores::visual_task), avg(&DimensionScores::aesthetic)};
    if (s.label == "initial") {
      initial = row.mean;
    } else {
      row.change_pct = DimensionScores{relative_gain(initial.code_task, row.mean.code_task),
                                       relative_gain(initial.code_quality, row.mean.code_quality),
                                       relative_gain(initial.visual_task, row.mean.visual_task),
                                       relative_gain(initial.aesthetic, row.mean.aesthetic)};
    }
    out.push_back(std::move(row));
  }
  return out;
}

double CategoryDistribution::percent(CritiqueCategory c) const {
  if (total == 0) return 0;
  const auto it = counts.find(c);
  return it == counts.end() ? 0.0 : 100.0 * it->second / total;
}

std::vector<CritiqueRef> collect_critiques(const std::vector<RunRecord>& runs, std::optional<CritiqueKind> kind) {
  std::vector<CritiqueRef> out;
  for (const auto& r : runs) {
    for (const auto& c : r.cycles) {
      if (!kind || *kind == CritiqueKind::visual) out.push_back({r.task.id, c.visual_critique});
      if (!kind || *kind == CritiqueKind::consolidated) out.push_back({r.task.id, c.consolidated_critique});
    }
  }
  return out;
}

CategoryDistribution classify_critiques(const std::vector<CritiqueRef>& critiques, ModelGateway& gateway,
                                        std::shared_ptr<const EndpointConfig> endpoint, const PromptLibrary& prompts,
                                        int parallelism, std::vector<ClassifiedCritique>* details) {
  if (critiques.empty()) throw EmptyInput("classify_critiques: no critiques");
  std::vector<ClassifiedCritique> results(critiques.size());
  std::vector<char> failed(critiques.size(), 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < critiques.size(); i = next++) {
      const auto& ref = critiques[i];
      auto& out = results[i];
      out.task_id = ref.task_id;
      out.cycle = ref.critique.cycle;
      out.kind = ref.critique.kind;
      try {
        ModelRequest request;
        request.user_parts.push_back(ContentPart::from_text(
            prompts.render(TemplateId::critique_classifier, {{"critique_text", ref.critique.text}})));
        request.endpoint = endpoint;
        request.role = Role::classifier;
        request.ledger_key = "analytics/classify";
        out.raw_response = gateway.complete(request).text;
        out.category = parse_category(out.raw_response);
      } catch (const Unclassifiable& e) {
        spdlog::debug("critique {}#{} unclassifiable: {}", ref.task_id, ref.critique.cycle, e.what());
      } catch (const Error& e) {
        spdlog::warn("critique {}#{}: classifier failed: {}", ref.task_id, ref.critique.cycle, e.what());
        failed[i] = 1;
      }
    }
  };
  const auto workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(parallelism, 1)), 1, critiques.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }

  CategoryDistribution dist;
  for (const auto c : k_all_categories) dist.counts[c] = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].category) {
      ++dist.counts[*results[i].category];
      ++dist.total;
    } else if (failed[i]) {
      ++dist.failed;
    } else {
      ++dist.unclassifiable;
    }
  }
  if (details) *details = std::move(results);
  return dist;
}

std::vector<SeriesPoint> score_vs_tokens(const std::vector<RunRecord>& runs, const ReportOptions& options) {
  std::vector<SeriesPoint> points;
  for (const auto& row : cycle_report(runs, options)) {
    if (row.label == "initial" || row.label.starts_with("cycle_") || row.label == "best") {
      points.push_back({row.label, row.mean_cumulative_tokens, row.mean, row.label == "best"});
    }
  }
  return points;
}

std::string row_title(const std::string& label) {
  if (label == "initial") return "Initial code";
  if (label == "best") return "CITL: Best";
  if (label == "refine_no_critic") return "Refine w/o critic";
  if (label == "distilled") return "Distilled generator";
  if (label.starts_with("cycle_")) return "CITL: Cycle " + label.substr(6);
  return label;
}

std::string format_cycle_table(const std::vector<CycleAggregate>& rows) {
  std::string out = "| Method | Score | SE | Gain | Tokens | n |\n|---|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    out += fmt::format("| {} | {} | {} | {} | {:.0f} | {} |\n", row_title(r.label), format_score(r.mean),
                       r.se ? format_score(*r.se) : "", r.gain_pct ? format_gain(*r.gain_pct) + "%" : "",
                       r.mean_cumulative_tokens, r.n);
  }
  return out;
}

std::string format_dimension_table(const std::vector<DimensionRow>& rows) {
  std::string out =
      "| Method | Code: task | Code: quality | Visual: task | Visual: aesthetic | n |\n"
      "|---|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    const auto cell = [&](double DimensionScores::*field) {
      std::string s = format_score(r.mean.*field);
      if (r.change_pct) s += fmt::format(" ({}%)", format_gain((*r.change_pct).*field));
      return s;
    };
    out += fmt::format("| {} | {} | {} | {} | {} | {} |\n", row_title(r.label), cell(&DimensionScores::code_task),
                       cell(&DimensionScores::code_quality), cell(&DimensionScores::visual_task),
                       cell(&DimensionScores::aesthetic), r.n);
  }
  return out;
}

std::string format_category_table(const CategoryDistribution& d) {
  std::string out = "| Category | Count | Share |\n|---|---:|---:|\n";
  for (const auto c : k_all_categories) {
    out += fmt::format("| {} | {} | {}% |\n", classifier_label(c), d.counts.at(c), format_percent(d.percent(c)));
  }
  out += fmt::format("\nClassified: {}. Unclassifiable: {}. Failed: {}.\n", d.total, d.unclassifiable, d.failed);
  return out;
}

std::string series_csv(const std::vector<SeriesPoint>& points) {
  std::string out = "label,mean_cumulative_tokens,mean_overall,is_best\n";
  for (const auto& p : points) {
    out += fmt::format("{},{:.1f},{:.6f},{}\n", p.label, p.mean_cumulative_tokens, p.mean_overall, p.best ? 1 : 0);
  }
  return out;
}

std::string categories_csv(const CategoryDistribution& d) {
  std::string out = "category,label,count,percent\n";
  for (const auto c : k_all_categories) {
    out += fmt::format("{},\"{}\",{},{}\n", to_string(c), classifier_label(c), d.counts.at(c),
                       format_percent(d.percent(c)));
  }
  return out;
}

json to_json(const CycleAggregate& r) {
  json j = {{"label", r.label}, {"n", r.n}, {"mean", r.mean}, {"mean_cumulative_tokens", r.mean_cumulative_tokens}};
  j["se"] = r.se ? json(*r.se) : json();
  j["gain_pct"] = r.gain_pct ? json(*r.gain_pct) : json();
  return j;
}

json to_json(const DimensionRow& r) {
  json j = {{"label", r.label}, {"n", r.n}, {"mean", r.mean}};
  j["change_pct"] = r.change_pct ? json(*r.change_pct) : json();
  return j;
}

json to_json(const CategoryDistribution& d) {
  json counts = json::object();
  json shares = json::object();
  for (const auto c : k_all_categories) {
    counts[std::string(to_string(c))] = d.counts.at(c);
    shares[std::string(to_string(c))] = d.percent(c);
  }
  return {{"counts", counts}, {"percent", shares}, {"total", d.total}, {"unclassifiable", d.unclassifiable},
          {"failed", d.failed}};
}

CategoryDistribution category_distribution_from_json(const json& doc) {
  CategoryDistribution d;
  for (const auto c : k_all_categories) d.counts[c] = doc.at("counts").at(std::string(to_string(c))).get<int>();
  d.total = doc.at("total").get<int>();
  d.unclassifiable = doc.value("unclassifiable", 0);
  d.failed = doc.value("failed", 0);
  return d;
}

std::vector<RunRecord> load_runs(const std::filesystem::path& artifact_dir) {
  if (!std::filesystem::is_directory(artifact_dir)) {
    throw ConfigError(fmt::format("{} is not a directory", artifact_dir.string()));
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(artifact_dir)) {
    const auto f = entry.path() / "run.json";
    if (entry.is_directory() && std::filesystem::exists(f)) files.push_back(f);
  }
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> runs;
  for (const auto& f : files) runs.push_back(parse_run_record(read_file(f)));
  return runs;
}

void write_report(const std::filesystem::path& out_dir, const std::vector<RunRecord>& runs,
                  const ReportOptions& options, const CategoryDistribution* categories,
                  std::optional<std::uint64_t> seed) {
  const auto cycles = cycle_report(runs, options);
  const auto series = score_vs_tokens(runs, options);
  std::optional<std::vector<DimensionRow>> dims;
  std::string dims_note;
  try {
    dims = dimension_breakdown(runs, options);
  } catch (const Error& e) {
    dims_note = fmt::format("Dimension breakdown unavailable: {}.", e.what());
  }

  json report = {{"runs", runs.size()}, {"include_judge_tokens", options.include_judge_tokens}};
  report["seed"] = seed ? json(*seed) : json();
  report["cycles"] = json::array();
  for (const auto& r : cycles) report["cycles"].push_back(to_json(r));
  report["dimensions"] = json();
  if (dims) {
    report["dimensions"] = json::array();
    for (const auto& r : *dims) report["dimensions"].push_back(to_json(r));
  }
  report["series"] = json::array();
  for (const auto& p : series) {
    report["series"].push_back(
        {{"label", p.label}, {"mean_cumulative_tokens", p.mean_cumulative_tokens}, {"mean_overall", p.mean_overall},
         {"best", p.best}});
  }
  report["categories"] = categories ? to_json(*categories) : json();
  int failed = 0;
  for (const auto& r : runs) failed += r.failure ? 1 : 0;
  report["failed_runs"] = failed;

  std::string md = "# Results\n\n";
  md += fmt::format("Runs: {} ({} with a recorded failure). Seed: {}. Token column: {}.\n\n", runs.size(), failed,
                    seed ? std::to_string(*seed) : std::string("n/a"),
                    options.include_judge_tokens ? "pipeline + judge" : "pipeline only");
  md += "## Overall score by cycle\n\n" + format_cycle_table(cycles);
  md += "\n## Dimension breakdown\n\n";
  md += dims ? format_dimension_table(*dims) : dims_note + "\n";
  if (categories) md += "\n## Critique categories\n\n" + format_category_table(*categories);

  write_file(out_dir / "report.json", report.dump(2) + "\n");
  write_file(out_dir / "report.md", md);
  write_file(out_dir / "series.csv", series_csv(series));
  if (categories) write_file(out_dir / "categories.csv", categories_csv(*categories));
}

}  // namespace citl
