#pragma once

// Uniform client over chat-completion endpoints (text-only and multimodal).
//
// ModelGateway adds retries, a per-endpoint requests-per-minute cap and a
// token ledger on top of a ChatBackend. Two backends ship: HttpChatBackend
// (OpenAI- and Anthropic-style HTTP APIs) and ScriptedBackend (deterministic
// canned responses for offline runs and tests).

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "citl/clock.hpp"
#include "citl/domain.hpp"

namespace citl {

enum class Provider { openai, anthropic };

struct EndpointConfig {
  std::string name;
  Provider provider = Provider::openai;
  std::string base_url;
  std::string model_id;
  std::string api_key_env;  // name of the environment variable holding the key
  bool multimodal = false;
  int max_retries = 3;
  double timeout_seconds = 120;
  int requests_per_minute = 0;  // 0 = uncapped
  std::optional<double> temperature;  // unset: the role default applies
  int max_output_tokens = 8192;

  void validate() const;  // throws ConfigError
};

enum class Role { generator, visual_critic, code_critic, improver, judge, classifier, filter };
std::string_view to_string(Role r);

/// 0.7 for roles that write code, 0.2 for critics, judges and classifiers.
double default_temperature(Role r);

struct ContentPart {
  enum class Kind { text, image } kind = Kind::text;
  std::string text;
  std::vector<std::uint8_t> image;  // encoded image bytes
  std::string media_type;           // e.g. image/png

  static ContentPart from_text(std::string t) { return {Kind::text, std::move(t), {}, {}}; }
  static ContentPart from_image(std::vector<std::uint8_t> bytes, std::string media = "image/png") {
    return {Kind::image, {}, std::move(bytes), std::move(media)};
  }
};

struct ModelRequest {
  std::optional<std::string> system_text;
  std::vector<ContentPart> user_parts;
  std::shared_ptr<const EndpointConfig> endpoint;
  Role role = Role::generator;
  std::string ledger_key;  // token ledger bucket, e.g. "<task>/pipeline"

  double temperature() const;
  int image_count() const;
};

/// Flat text form of a request (system + parts, images as markers). Scripted
/// matchers run against it and transcripts record it.
std::string render_request_text(const ModelRequest& request);

struct ModelResponse {
  std::string text;
  TokenUsage tokens;
  double latency_seconds = 0;
  int attempt_count = 0;  // retries used; 0 when the first attempt succeeded
};

struct BackendReply {
  std::string text;
  std::optional<TokenUsage> usage;
};

/// Transport-level client. send() throws TransportError for retryable
/// failures and PolicyError for non-retryable rejections.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual BackendReply send(const ModelRequest& request) = 0;
};

// ---------------------------------------------------------------------------

struct ScriptEntry {
  std::vector<std::string> matchers;  // all must occur in the request text
  std::string response_text;
  std::optional<TokenUsage> usage;
  enum class Failure { none, transport, policy } failure = Failure::none;
};

/// Consumes entries first-in-first-out among those whose matchers all occur
/// in the rendered request. Unmatched requests throw ScriptExhausted.
class ScriptedBackend final : public ChatBackend {
 public:
  explicit ScriptedBackend(std::vector<ScriptEntry> script);

  BackendReply send(const ModelRequest& request) override;

  std::size_t remaining() const;

  struct Exchange {
    std::string request_text;
    std::string response_text;
  };
  std::vector<Exchange> transcript() const;

 private:
  mutable std::mutex mutex_;
  std::vector<ScriptEntry> script_;
  std::vector<bool> consumed_;
  std::vector<Exchange> transcript_;
};

/// Reads a script file: JSON lines (or one JSON array) of objects with keys
/// match (string or array of strings), text, prompt_tokens,
/// completion_tokens and optional fail ("transport" | "policy").
std::vector<ScriptEntry> load_script(const std::filesystem::path& path);
std::vector<ScriptEntry> parse_script(std::string_view text);

std::shared_ptr<ScriptedBackend> make_scripted_backend(std::vector<ScriptEntry> script);

/// Live HTTP backend; dispatches on EndpointConfig::provider.
class HttpChatBackend final : public ChatBackend {
 public:
  BackendReply send(const ModelRequest& request) override;
};

// ---------------------------------------------------------------------------

/// Sliding 60-second window cap on request starts.
class RateLimiter {
 public:
  RateLimiter(int requests_per_minute, Clock& clock);
  void acquire();

 private:
  int cap_;
  Clock& clock_;
  std::mutex mutex_;
  std::deque<Clock::time_point> starts_;
};

struct GatewayOptions {
  Clock* clock = nullptr;  // defaults to the steady clock
  double initial_backoff_seconds = 1.0;
  double max_backoff_seconds = 30.0;
};

class ModelGateway {
 public:
  explicit ModelGateway(std::shared_ptr<ChatBackend> backend, GatewayOptions options = {});

  /// Sends the request, retrying transport failures up to the endpoint's
  /// max_retries. Throws ModalityError for images sent to text-only
  /// endpoints, PolicyError on rejection, TransportError once retries are
  /// exhausted.
  ModelResponse complete(const ModelRequest& request);

  TokenUsage ledger(std::string_view key) const;
  TokenUsage ledger_total() const;
  std::map<std::string, TokenUsage> ledger_snapshot() const;

 private:
  RateLimiter& limiter_for(const EndpointConfig& endpoint);

  std::shared_ptr<ChatBackend> backend_;
  GatewayOptions options_;
  Clock& clock_;
  mutable std::mutex mutex_;
  std::map<std::string, std::unique_ptr<RateLimiter>> limiters_;
  std::map<std::string, TokenUsage, std::less<>> ledger_;
  TokenUsage total_;
};

/// chars/4, rounded up.
std::int64_t estimate_tokens(std::string_view text);

}  // namespace citl
