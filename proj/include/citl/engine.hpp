#pragma once

// Critic-in-the-loop runner: generate, render, evaluate, then T cycles of
// visual critique -> consolidated critique -> improve -> render -> evaluate,
// keeping the best-scored solution (latest wins ties).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "citl/domain.hpp"
#include "citl/judge.hpp"
#include "citl/model_gateway.hpp"
#include "citl/prompt_kit.hpp"
#include "citl/renderer.hpp"

namespace citl {

struct PipelineConfig {
  std::shared_ptr<const EndpointConfig> generator;
  std::shared_ptr<const EndpointConfig> visual_critic;  // must be multimodal
  std::shared_ptr<const EndpointConfig> code_critic;    // defaults to generator
  std::shared_ptr<const EndpointConfig> improver;       // defaults to generator
  JudgeConfig judge;                                    // endpoint defaults to visual_critic
  int budget_T = 3;
  Viewport viewport;
  std::filesystem::path artifact_dir;  // empty: nothing persisted
  int task_parallelism = 1;
  std::uint64_t seed = 0;
  int stage_parse_retries = 1;
  bool generator_is_distilled = false;  // tags cycle-0 solutions as distilled

  /// Fills defaulted endpoints and checks invariants (ConfigError).
  void resolve();
};

struct RunOptions {
  bool baseline_no_critic = false;  // also run the refine-without-critic baseline
};

class CitlEngine {
 public:
  CitlEngine(ModelGateway& gateway, PageRenderer& renderer, const PromptLibrary& prompts, PipelineConfig config);

  /// Runs one task. Stage failures are recorded in the returned record,
  /// never thrown.
  RunRecord run_task(const Task& task, const RunOptions& options = {});

  /// One generator call with the refine template on the initial solution.
  /// Throws StageFailed when the call or extraction fails. An evaluation
  /// failure leaves the result unscored.
  ScoredSolution refine_without_critic(const Task& task, const Solution& initial);

  /// run_task over all tasks with up to task_parallelism workers, results in
  /// input order. Throws EmptyInput for an empty list.
  std::vector<RunRecord> run_corpus(const std::vector<Task>& tasks, const RunOptions& options = {});

  const PipelineConfig& config() const { return config_; }

  static std::string pipeline_ledger_key(const Task& task) { return task.id + "/pipeline"; }
  static std::string judge_ledger_key(const Task& task) { return task.id + "/judge"; }

 private:
  struct Rendered {
    ScoredSolution scored;
    std::optional<Screenshot> screenshot;  // absent when rendering failed
    std::optional<StageFailure> failure;
  };

  std::string call_stage(const std::string& stage, int cycle, ModelRequest request, TokenUsage& tokens,
                         const std::function<std::string(std::string_view)>& parse);
  Rendered render_and_score(const Task& task, Solution solution, const std::string& artifact_stem);
  std::filesystem::path task_dir(const Task& task) const;
  void persist_text(const Task& task, const std::string& name, std::string_view text) const;

  ModelGateway& gateway_;
  PageRenderer& renderer_;
  const PromptLibrary& prompts_;
  PipelineConfig config_;
};

}  // namespace citl
