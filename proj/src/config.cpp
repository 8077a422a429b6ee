#include "citl/config.hpp"

#include <cstdlib>
#include <set>

#include <fmt/format.h>

#include "citl/util.hpp"

#ifndef CITL_DEFAULT_CHROMEDRIVER
#define CITL_DEFAULT_CHROMEDRIVER "chromedriver"
#endif
#ifndef CITL_DEFAULT_BROWSER
#define CITL_DEFAULT_BROWSER ""
#endif
#ifndef CITL_ASSETS_DIR
#define CITL_ASSETS_DIR "assets"
#endif

namespace citl {

using nlohmann::json;

namespace {

std::string env_or(const char* name, const char* fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

// Reads doc[key] into out when present, with a type check.
template <typename T>
void read(const json& doc, const char* key, T& out, std::string_view where) {
  if (!doc.contains(key) || doc[key].is_null()) return;
  try {
    out = doc[key].get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("{}.{}: unexpected type", where, key));
  }
}

const std::set<std::string, std::less<>>& known(std::string_view section) {
  static const std::map<std::string, std::set<std::string, std::less<>>, std::less<>> keys = {
      {"", {"endpoints", "roles", "judge", "prompts", "renderer", "pipeline", "corpus", "export", "artifact_dir"}},
      {"endpoint",
       {"provider", "base_url", "model_id", "api_key_env", "multimodal", "max_retries", "timeout_seconds",
        "requests_per_minute", "temperature", "max_output_tokens"}},
      {"roles", {"generator", "visual_critic", "code_critic", "improver", "judge", "classifier", "filter"}},
      {"judge", {"kind", "max_parse_retries"}},
      {"prompts", {"dir"}},
      {"renderer",
       {"webdriver_url", "driver_path", "port", "browser_path", "browser_args", "pool_size", "settle_seconds",
        "page_load_timeout_seconds", "command_timeout_seconds", "offline", "offline_stylesheet", "temp_dir",
        "viewport"}},
      {"viewport", {"width", "height", "full_page", "max_page_height"}},
      {"pipeline", {"budget_T", "parallelism", "seed", "stage_parse_retries", "generator_is_distilled"}},
      {"corpus", {"train", "validation", "test", "sample_size", "seed"}},
      {"export", {"wrapped"}},
  };
  return keys.at(std::string(section));
}

void reject_unknown(const json& obj, std::string_view section, std::string_view where) {
  if (!obj.is_object()) throw ConfigError(fmt::format("{}: expected an object", where));
  for (const auto& [k, v] : obj.items()) {
    if (!known(section).contains(k)) throw ConfigError(fmt::format("{}: unknown key '{}'", where, k));
  }
}

}  // namespace

std::filesystem::path assets_dir() { return env_or("CITL_ASSETS_DIR", CITL_ASSETS_DIR); }

GlobalConfig default_config() {
  GlobalConfig c;
  auto e = std::make_shared<EndpointConfig>();
  e->name = "default";
  e->multimodal = true;
  c.endpoints["default"] = e;
  c.roles.generator = "default";
  c.roles.visual_critic = "default";
  c.renderer.driver_path = env_or("CITL_CHROMEDRIVER", CITL_DEFAULT_CHROMEDRIVER);
  c.renderer.browser_path = env_or("CITL_BROWSER", CITL_DEFAULT_BROWSER);
  c.renderer.offline_stylesheet = assets_dir() / "offline.css";
  return c;
}

std::shared_ptr<const EndpointConfig> GlobalConfig::endpoint_for(Role role) const {
  std::string name;
  switch (role) {
    case Role::generator: name = roles.generator; break;
    case Role::visual_critic: name = roles.visual_critic; break;
    case Role::code_critic: name = roles.code_critic.empty() ? roles.generator : roles.code_critic; break;
    case Role::improver: name = roles.improver.empty() ? roles.generator : roles.improver; break;
    case Role::judge: name = roles.judge.empty() ? roles.visual_critic : roles.judge; break;
    case Role::classifier: name = roles.classifier.empty() ? roles.generator : roles.classifier; break;
    case Role::filter:
      if (roles.filter.empty()) return nullptr;
      name = roles.filter;
      break;
  }
  const auto it = endpoints.find(name);
  if (it == endpoints.end()) {
    throw ConfigError(fmt::format("role {} refers to undefined endpoint '{}'", to_string(role), name));
  }
  return it->second;
}

void GlobalConfig::validate() const {
  for (const auto r : {Role::generator, Role::visual_critic, Role::code_critic, Role::improver, Role::judge,
                       Role::classifier, Role::filter}) {
    if (const auto e = endpoint_for(r)) e->validate();
  }
  if (!endpoint_for(Role::visual_critic)->multimodal) throw ConfigError("visual_critic endpoint must be multimodal");
  if (!endpoint_for(Role::judge)->multimodal) throw ConfigError("judge endpoint must be multimodal");
  if (parallelism < 1) throw ConfigError("pipeline.parallelism must be >= 1");
  if (budget_T < 0) throw ConfigError("pipeline.budget_T must be >= 0");
  if (renderer.pool_size < 1) throw ConfigError("renderer.pool_size must be >= 1");
  viewport.validate();
  split.validate();
}

JudgeConfig GlobalConfig::judge() const {
  return JudgeConfig{endpoint_for(Role::judge), judge_kind, judge_max_parse_retries};
}

PipelineConfig GlobalConfig::pipeline() const {
  PipelineConfig p;
  p.generator = endpoint_for(Role::generator);
  p.visual_critic = endpoint_for(Role::visual_critic);
  p.code_critic = endpoint_for(Role::code_critic);
  p.improver = endpoint_for(Role::improver);
  p.judge = judge();
  p.budget_T = budget_T;
  p.viewport = viewport;
  p.artifact_dir = artifact_dir;
  p.task_parallelism = parallelism;
  p.seed = seed;
  p.stage_parse_retries = stage_parse_retries;
  p.generator_is_distilled = generator_is_distilled;
  return p;
}

GlobalConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  GlobalConfig c = default_config();
  reject_unknown(doc, "", "config");

  if (doc.contains("endpoints")) {
    const auto& eps = doc["endpoints"];
    if (!eps.is_object() || eps.empty()) throw ConfigError("config.endpoints: expected a non-empty object");
    c.endpoints.clear();
    for (const auto& [name, body] : eps.items()) {
      const auto where = "endpoints." + name;
      reject_unknown(body, "endpoint", where);
      auto e = std::make_shared<EndpointConfig>();
      e->name = name;
      std::string provider = "openai";
      read(body, "provider", provider, where);
      if (provider == "openai") {
        e->provider = Provider::openai;
      } else if (provider == "anthropic") {
        e->provider = Provider::anthropic;
      } else {
        throw ConfigError(fmt::format("{}.provider: unknown provider '{}'", where, provider));
      }
      read(body, "base_url", e->base_url, where);
      read(body, "model_id", e->model_id, where);
      read(body, "api_key_env", e->api_key_env, where);
      read(body, "multimodal", e->multimodal, where);
      read(body, "max_retries", e->max_retries, where);
      read(body, "timeout_seconds", e->timeout_seconds, where);
      read(body, "requests_per_minute", e->requests_per_minute, where);
      if (body.contains("temperature") && !body["temperature"].is_null()) {
        double t = 0;
        read(body, "temperature", t, where);
        e->temperature = t;
      }
      read(body, "max_output_tokens", e->max_output_tokens, where);
      e->validate();
      c.endpoints[name] = std::move(e);
    }
    if (c.endpoints.size() == 1) {
      c.roles.generator = c.roles.visual_critic = c.endpoints.begin()->first;
    } else {
      c.roles.generator.clear();
      c.roles.visual_critic.clear();
    }
  }
  if (doc.contains("roles")) {
    const auto& r = doc["roles"];
    reject_unknown(r, "roles", "roles");
    read(r, "generator", c.roles.generator, "roles");
    read(r, "visual_critic", c.roles.visual_critic, "roles");
    read(r, "code_critic", c.roles.code_critic, "roles");
    read(r, "improver", c.roles.improver, "roles");
    read(r, "judge", c.roles.judge, "roles");
    read(r, "classifier", c.roles.classifier, "roles");
    read(r, "filter", c.roles.filter, "roles");
  }
  if (c.roles.generator.empty() || c.roles.visual_critic.empty()) {
    throw ConfigError("roles.generator and roles.visual_critic must be set when several endpoints are defined");
  }
  if (doc.contains("judge")) {
    const auto& j = doc["judge"];
    reject_unknown(j, "judge", "judge");
    std::string kind = "multi";
    read(j, "kind", kind, "judge");
    c.judge_kind = parse_judge_kind(kind);
    read(j, "max_parse_retries", c.judge_max_parse_retries, "judge");
  }
  if (doc.contains("prompts")) {
    reject_unknown(doc["prompts"], "prompts", "prompts");
    std::string dir;
    read(doc["prompts"], "dir", dir, "prompts");
    if (!dir.empty()) c.prompts_dir = resolve(base_dir, dir);
  }
  if (doc.contains("renderer")) {
    const auto& r = doc["renderer"];
    reject_unknown(r, "renderer", "renderer");
    const auto path = [&](const char* key, std::filesystem::path& out) {
      std::string s;
      read(r, key, s, "renderer");
      if (!s.empty()) out = resolve(base_dir, s);
    };
    read(r, "webdriver_url", c.renderer.webdriver_url, "renderer");
    path("driver_path", c.renderer.driver_path);
    read(r, "port", c.renderer.port, "renderer");
    path("browser_path", c.renderer.browser_path);
    read(r, "browser_args", c.renderer.browser_args, "renderer");
    read(r, "pool_size", c.renderer.pool_size, "renderer");
    read(r, "settle_seconds", c.renderer.settle_seconds, "renderer");
    read(r, "page_load_timeout_seconds", c.renderer.page_load_timeout_seconds, "renderer");
    read(r, "command_timeout_seconds", c.renderer.command_timeout_seconds, "renderer");
    read(r, "offline", c.renderer.offline, "renderer");
    path("offline_stylesheet", c.renderer.offline_stylesheet);
    path("temp_dir", c.renderer.temp_dir);
    if (r.contains("viewport")) {
      const auto& v = r["viewport"];
      reject_unknown(v, "viewport", "renderer.viewport");
      read(v, "width", c.viewport.width, "renderer.viewport");
      read(v, "height", c.viewport.height, "renderer.viewport");
      read(v, "full_page", c.viewport.full_page, "renderer.viewport");
      read(v, "max_page_height", c.viewport.max_page_height, "renderer.viewport");
    }
  }
  if (doc.contains("pipeline")) {
    const auto& p = doc["pipeline"];
    reject_unknown(p, "pipeline", "pipeline");
    read(p, "budget_T", c.budget_T, "pipeline");
    read(p, "parallelism", c.parallelism, "pipeline");
    read(p, "seed", c.seed, "pipeline");
    read(p, "stage_parse_retries", c.stage_parse_retries, "pipeline");
    read(p, "generator_is_distilled", c.generator_is_distilled, "pipeline");
  }
  if (doc.contains("corpus")) {
    const auto& s = doc["corpus"];
    reject_unknown(s, "corpus", "corpus");
    read(s, "train", c.split.train, "corpus");
    read(s, "validation", c.split.validation, "corpus");
    read(s, "test", c.split.test, "corpus");
    read(s, "sample_size", c.split.sample_size, "corpus");
    read(s, "seed", c.split.seed, "corpus");
  }
  if (doc.contains("export")) {
    reject_unknown(doc["export"], "export", "export");
    read(doc["export"], "wrapped", c.export_wrapped, "export");
  }
  if (doc.contains("artifact_dir")) {
    std::string dir;
    read(doc, "artifact_dir", dir, "config");
    c.artifact_dir = resolve(base_dir, dir);
  }
  c.validate();
  return c;
}

GlobalConfig load_config(const std::filesystem::path& path) {
  const auto text = read_file(path);
  const json doc = json::parse(text, nullptr, false, true);
  if (doc.is_discarded()) throw ConfigError(fmt::format("{}: not valid JSON", path.string()));
  return parse_config(doc, path.parent_path());
}

}  // namespace citl
