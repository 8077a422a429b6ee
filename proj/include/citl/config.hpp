#pragma once

// Declarative JSON configuration shared by all commands.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "citl/corpus.hpp"
#include "citl/engine.hpp"
#include "citl/judge.hpp"
#include "citl/model_gateway.hpp"
#include "citl/renderer.hpp"

namespace citl {

struct RoleBindings {
  std::string generator;
  std::string visual_critic;
  std::string code_critic;  // empty: generator
  std::string improver;     // empty: generator
  std::string judge;        // empty: visual_critic
  std::string classifier;   // empty: generator
  std::string filter;       // empty: keyword heuristic
};

struct GlobalConfig {
  std::map<std::string, std::shared_ptr<const EndpointConfig>> endpoints;
  RoleBindings roles;
  JudgeKind judge_kind = JudgeKind::multi;
  int judge_max_parse_retries = 1;
  std::optional<std::filesystem::path> prompts_dir;
  WebDriverSettings renderer;
  Viewport viewport;
  int budget_T = 3;
  int parallelism = 1;
  std::uint64_t seed = 0;
  int stage_parse_retries = 1;
  bool generator_is_distilled = false;
  SplitSpec split;
  bool export_wrapped = false;
  std::filesystem::path artifact_dir = "artifacts";

  /// Endpoint bound to a role after defaults; nullptr for an unbound filter.
  std::shared_ptr<const EndpointConfig> endpoint_for(Role role) const;

  JudgeConfig judge() const;
  PipelineConfig pipeline() const;

  /// Checks that every role names a defined endpoint (ConfigError).
  void validate() const;
};

/// Defaults: one multimodal endpoint named "default" bound to every role,
/// renderer paths from CITL_CHROMEDRIVER / CITL_BROWSER when set.
GlobalConfig default_config();

/// Relative paths inside the document resolve against `base_dir`.
GlobalConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
GlobalConfig load_config(const std::filesystem::path& path);

/// Directory holding offline.css and other runtime assets.
std::filesystem::path assets_dir();

}  // namespace citl
