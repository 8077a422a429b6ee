#pragma once

// Scoring of rendered solutions: the two-call multi-dimensional scheme (code
// judge + visual judge, four dimensions averaged) and the one-call rubric
// judge.

#include <memory>
#include <string>
#include <string_view>

#include "citl/domain.hpp"
#include "citl/model_gateway.hpp"
#include "citl/prompt_kit.hpp"
#include "citl/renderer.hpp"

namespace citl {

struct JudgeConfig {
  std::shared_ptr<const EndpointConfig> endpoint;  // must be multimodal
  JudgeKind kind = JudgeKind::multi;
  int max_parse_retries = 1;

  void validate() const;  // throws ConfigError
};

/// Everything a judge call needs besides the config.
struct JudgeServices {
  ModelGateway& gateway;
  const PromptLibrary& prompts;
};

/// Code judge sees task text and code only; visual judge sees task text and
/// screenshot only. The two calls run concurrently. Throws EvaluationFailed
/// once a judge's parse retries are exhausted; transport and policy errors
/// propagate.
Evaluation judge_multidim(JudgeServices services, const Task& task, const Solution& solution,
                          const Screenshot& screenshot, const JudgeConfig& config,
                          std::string_view ledger_key);

/// One call with task text, code and screenshot; overall = parsed score.
Evaluation judge_singledim(JudgeServices services, const Task& task, const Solution& solution,
                           const Screenshot& screenshot, const JudgeConfig& config,
                           std::string_view ledger_key);

/// Dispatches on config.kind.
Evaluation evaluate(JudgeServices services, const Task& task, const Solution& solution,
                    const Screenshot& screenshot, const JudgeConfig& config, std::string_view ledger_key);

/// True for the error kinds raised by response parsers (retryable by
/// resending the same prompt).
bool is_parse_error(const Error& error);

}  // namespace citl
