#include "citl/model_gateway.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "citl/util.hpp"

namespace citl {

void EndpointConfig::validate() const {
  if (max_retries < 0) throw ConfigError(fmt::format("endpoint {}: max_retries < 0", name));
  if (!(timeout_seconds > 0)) throw ConfigError(fmt::format("endpoint {}: timeout must be > 0", name));
  if (temperature && *temperature < 0) throw ConfigError(fmt::format("endpoint {}: temperature < 0", name));
  if (requests_per_minute < 0) throw ConfigError(fmt::format("endpoint {}: requests_per_minute < 0", name));
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::generator: return "generator";
    case Role::visual_critic: return "visual_critic";
    case Role::code_critic: return "code_critic";
    case Role::improver: return "improver";
    case Role::judge: return "judge";
    case Role::classifier: return "classifier";
    case Role::filter: return "filter";
  }
  return "?";
}

double default_temperature(Role r) {
  switch (r) {
    case Role::generator:
    case Role::improver:
      return 0.7;
    default:
      return 0.2;
  }
}

double ModelRequest::temperature() const {
  if (endpoint && endpoint->temperature) return *endpoint->temperature;
  return default_temperature(role);
}

int ModelRequest::image_count() const {
  return static_cast<int>(std::count_if(user_parts.begin(), user_parts.end(), [](const ContentPart& p) {
    return p.kind == ContentPart::Kind::image;
  }));
}

std::string render_request_text(const ModelRequest& request) {
  std::string out;
  if (request.system_text) {
    out += *request.system_text;
    out += "\n\n";
  }
  for (std::size_t i = 0; i < request.user_parts.size(); ++i) {
    const auto& part = request.user_parts[i];
    if (i) out += "\n\n";
    if (part.kind == ContentPart::Kind::text) {
      out += part.text;
    } else {
      out += fmt::format("[{} {} bytes]", part.media_type, part.image.size());
    }
  }
  return out;
}

std::int64_t estimate_tokens(std::string_view text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<ScriptEntry> script)
    : script_(std::move(script)), consumed_(script_.size(), false) {}

BackendReply ScriptedBackend::send(const ModelRequest& request) {
  const std::string text = render_request_text(request);
  std::lock_guard lock(mutex_);
  for (std::size_t i = 0; i < script_.size(); ++i) {
    if (consumed_[i]) continue;
    const auto& entry = script_[i];
    const bool match = std::all_of(entry.matchers.begin(), entry.matchers.end(),
                                   [&](const std::string& m) { return text.find(m) != std::string::npos; });
    if (!match) continue;
    consumed_[i] = true;
    transcript_.push_back({text, entry.response_text});
    switch (entry.failure) {
      case ScriptEntry::Failure::transport:
        throw TransportError(fmt::format("scripted transport failure (entry {})", i));
      case ScriptEntry::Failure::policy:
        throw PolicyError(fmt::format("scripted policy rejection (entry {})", i));
      case ScriptEntry::Failure::none:
        break;
    }
    return {entry.response_text, entry.usage};
  }
  throw ScriptExhausted(fmt::format("no unconsumed script entry matches {} request: {:.120}",
                                    to_string(request.role), text));
}

std::size_t ScriptedBackend::remaining() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count(consumed_.begin(), consumed_.end(), false));
}

std::vector<ScriptedBackend::Exchange> ScriptedBackend::transcript() const {
  std::lock_guard lock(mutex_);
  return transcript_;
}

namespace {

ScriptEntry script_entry_from_json(const nlohmann::json& j) {
  ScriptEntry e;
  if (const auto it = j.find("match"); it != j.end()) {
    if (it->is_string()) {
      e.matchers.push_back(it->get<std::string>());
    } else {
      e.matchers = it->get<std::vector<std::string>>();
    }
  }
  e.response_text = j.value("text", std::string());
  if (j.contains("prompt_tokens") || j.contains("completion_tokens")) {
    e.usage = TokenUsage{j.value("prompt_tokens", std::int64_t{0}),
                         j.value("completion_tokens", std::int64_t{0}), false};
  }
  const auto fail = j.value("fail", std::string());
  if (fail == "transport") {
    e.failure = ScriptEntry::Failure::transport;
  } else if (fail == "policy") {
    e.failure = ScriptEntry::Failure::policy;
  } else if (!fail.empty()) {
    throw ConfigError(fmt::format("unknown script failure kind '{}'", fail));
  }
  return e;
}

}  // namespace

std::vector<ScriptEntry> parse_script(std::string_view text) {
  std::vector<ScriptEntry> out;
  const auto body = trim(text);
  try {
    if (body.starts_with("[")) {
      for (const auto& j : nlohmann::json::parse(body)) out.push_back(script_entry_from_json(j));
      return out;
    }
    std::size_t pos = 0;
    while (pos < body.size()) {
      auto nl = body.find('\n', pos);
      if (nl == std::string_view::npos) nl = body.size();
      const auto line = trim(body.substr(pos, nl - pos));
      pos = nl + 1;
      if (line.empty() || line.starts_with("//")) continue;
      out.push_back(script_entry_from_json(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("malformed script: {}", e.what()));
  }
  return out;
}

std::vector<ScriptEntry> load_script(const std::filesystem::path& path) {
  return parse_script(read_file(path));
}

std::shared_ptr<ScriptedBackend> make_scripted_backend(std::vector<ScriptEntry> script) {
  if (script.empty()) throw ConfigError("scripted backend needs at least one entry");
  return std::make_shared<ScriptedBackend>(std::move(script));
}

// ---------------------------------------------------------------------------

RateLimiter::RateLimiter(int requests_per_minute, Clock& clock)
    : cap_(requests_per_minute), clock_(clock) {}

void RateLimiter::acquire() {
  if (cap_ <= 0) return;
  constexpr auto window = std::chrono::seconds(60);
  std::unique_lock lock(mutex_);
  while (true) {
    const auto now = clock_.now();
    while (!starts_.empty() && starts_.front() + window <= now) starts_.pop_front();
    if (static_cast<int>(starts_.size()) < cap_) {
      starts_.push_back(now);
      return;
    }
    const auto wake = starts_.front() + window;
    lock.unlock();
    clock_.sleep_until(wake);
    lock.lock();
  }
}

ModelGateway::ModelGateway(std::shared_ptr<ChatBackend> backend, GatewayOptions options)
    : backend_(std::move(backend)),
      options_(options),
      clock_(options.clock ? *options.clock : steady_clock()) {}

RateLimiter& ModelGateway::limiter_for(const EndpointConfig& endpoint) {
  std::lock_guard lock(mutex_);
  auto& slot = limiters_[endpoint.name];
  if (!slot) slot = std::make_unique<RateLimiter>(endpoint.requests_per_minute, clock_);
  return *slot;
}

ModelResponse ModelGateway::complete(const ModelRequest& request) {
  if (!request.endpoint) throw ConfigError("model request without endpoint");
  const EndpointConfig& endpoint = *request.endpoint;
  if (request.user_parts.empty()) throw Error("InvalidRequest", "request has no user parts");
  const int images = request.image_count();
  if (images > 0 && !endpoint.multimodal) {
    throw ModalityError(fmt::format("endpoint '{}' is text-only but the request carries an image",
                                    endpoint.name));
  }
  if (images > 1) throw Error("InvalidRequest", "at most one image per request");

  RateLimiter& limiter = limiter_for(endpoint);
  const auto started = clock_.now();
  for (int attempt = 0;; ++attempt) {
    limiter.acquire();
    try {
      BackendReply reply = backend_->send(request);
      ModelResponse response;
      response.text = std::move(reply.text);
      if (reply.usage) {
        response.tokens = *reply.usage;
      } else {
        response.tokens = {estimate_tokens(render_request_text(request)), estimate_tokens(response.text),
                           true};
      }
      response.attempt_count = attempt;
      response.latency_seconds =
          std::chrono::duration<double>(clock_.now() - started).count();
      {
        std::lock_guard lock(mutex_);
        ledger_[request.ledger_key] += response.tokens;
        total_ += response.tokens;
      }
      return response;
    } catch (const TransportError& e) {
      if (attempt >= endpoint.max_retries) {
        throw TransportError(fmt::format("{} (after {} retries on '{}')", e.what(), attempt,
                                         endpoint.name));
      }
      spdlog::debug("retrying {} call on '{}': {}", to_string(request.role), endpoint.name, e.what());
      const double backoff = std::min(options_.max_backoff_seconds,
                                      options_.initial_backoff_seconds * std::pow(2.0, attempt));
      if (backoff > 0) {
        clock_.sleep_for(std::chrono::duration_cast<Clock::duration>(
            std::chrono::duration<double>(backoff)));
      }
    }
  }
}

TokenUsage ModelGateway::ledger(std::string_view key) const {
  std::lock_guard lock(mutex_);
  const auto it = ledger_.find(key);
  return it == ledger_.end() ? TokenUsage{} : it->second;
}

TokenUsage ModelGateway::ledger_total() const {
  std::lock_guard lock(mutex_);
  return total_;
}

std::map<std::string, TokenUsage> ModelGateway::ledger_snapshot() const {
  std::lock_guard lock(mutex_);
  return {ledger_.begin(), ledger_.end()};
}

}  // namespace citl
