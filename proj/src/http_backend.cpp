// OpenAI- and Anthropic-style chat-completion payloads over HTTP(S).

#include <cstdlib>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "citl/model_gateway.hpp"
#include "citl/util.hpp"

namespace citl {

namespace {

using nlohmann::json;

struct Target {
  std::string origin;  // scheme://host[:port]
  std::string path_prefix;
};

Target split_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError(fmt::format("bad base_url '{}'", base_url));
  const auto path_start = base_url.find('/', scheme_end + 3);
  Target t;
  t.origin = base_url.substr(0, path_start);
  t.path_prefix = path_start == std::string::npos ? "" : base_url.substr(path_start);
  while (!t.path_prefix.empty() && t.path_prefix.back() == '/') t.path_prefix.pop_back();
  return t;
}

std::string api_key(const EndpointConfig& endpoint) {
  if (endpoint.api_key_env.empty()) return {};
  const char* value = std::getenv(endpoint.api_key_env.c_str());
  if (!value) throw ConfigError(fmt::format("environment variable {} is not set", endpoint.api_key_env));
  return value;
}

json openai_payload(const ModelRequest& request) {
  const auto& endpoint = *request.endpoint;
  json messages = json::array();
  if (request.system_text) messages.push_back({{"role", "system"}, {"content", *request.system_text}});
  json content = json::array();
  for (const auto& part : request.user_parts) {
    if (part.kind == ContentPart::Kind::text) {
      content.push_back({{"type", "text"}, {"text", part.text}});
    } else {
      content.push_back({{"type", "image_url"},
                         {"image_url", {{"url", fmt::format("data:{};base64,{}", part.media_type,
                                                            base64_encode(part.image))}}}});
    }
  }
  messages.push_back({{"role", "user"}, {"content", content}});
  return {{"model", endpoint.model_id},
          {"messages", messages},
          {"temperature", request.temperature()},
          {"max_tokens", endpoint.max_output_tokens}};
}

json anthropic_payload(const ModelRequest& request) {
  const auto& endpoint = *request.endpoint;
  json content = json::array();
  for (const auto& part : request.user_parts) {
    if (part.kind == ContentPart::Kind::text) {
      content.push_back({{"type", "text"}, {"text", part.text}});
    } else {
      content.push_back({{"type", "image"},
                         {"source",
                          {{"type", "base64"},
                           {"media_type", part.media_type},
                           {"data", base64_encode(part.image)}}}});
    }
  }
  json payload = {{"model", endpoint.model_id},
                  {"messages", json::array({{{"role", "user"}, {"content", content}}})},
                  {"temperature", request.temperature()},
                  {"max_tokens", endpoint.max_output_tokens}};
  if (request.system_text) payload["system"] = *request.system_text;
  return payload;
}

BackendReply parse_openai(const json& body) {
  BackendReply reply;
  const auto& message = body.at("choices").at(0).at("message");
  const auto& content = message.at("content");
  if (content.is_string()) {
    reply.text = content.get<std::string>();
  } else if (content.is_array()) {
    for (const auto& part : content) {
      if (part.value("type", "") == "text") reply.text += part.value("text", "");
    }
  }
  if (const auto it = body.find("usage"); it != body.end() && it->is_object()) {
    reply.usage = TokenUsage{it->value("prompt_tokens", std::int64_t{0}),
                             it->value("completion_tokens", std::int64_t{0}), false};
  }
  return reply;
}

BackendReply parse_anthropic(const json& body) {
  BackendReply reply;
  for (const auto& block : body.at("content")) {
    if (block.value("type", "") == "text") reply.text += block.value("text", "");
  }
  if (const auto it = body.find("usage"); it != body.end() && it->is_object()) {
    reply.usage = TokenUsage{it->value("input_tokens", std::int64_t{0}),
                             it->value("output_tokens", std::int64_t{0}), false};
  }
  return reply;
}

bool retryable_status(int status) { return status == 408 || status == 409 || status == 429 || status >= 500; }

}  // namespace

BackendReply HttpChatBackend::send(const ModelRequest& request) {
  const auto& endpoint = *request.endpoint;
  const Target target = split_url(endpoint.base_url);
  const std::string key = api_key(endpoint);

  httplib::Client client(target.origin);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(endpoint.timeout_seconds));
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers headers;
  std::string path;
  json payload;
  if (endpoint.provider == Provider::anthropic) {
    path = target.path_prefix + "/v1/messages";
    headers.emplace("anthropic-version", "2023-06-01");
    if (!key.empty()) headers.emplace("x-api-key", key);
    payload = anthropic_payload(request);
  } else {
    path = target.path_prefix + "/chat/completions";
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
    payload = openai_payload(request);
  }

  const auto result = client.Post(path, headers, payload.dump(), "application/json");
  if (!result) {
    throw TransportError(fmt::format("{}: {}", endpoint.name, httplib::to_string(result.error())));
  }
  if (result->status != 200) {
    const auto message = fmt::format("{} returned HTTP {}: {:.300}", endpoint.name, result->status, result->body);
    if (retryable_status(result->status)) throw TransportError(message);
    throw PolicyError(message);
  }
  try {
    const auto body = json::parse(result->body);
    return endpoint.provider == Provider::anthropic ? parse_anthropic(body) : parse_openai(body);
  } catch (const json::exception& e) {
    throw TransportError(fmt::format("{}: unparseable response body: {}", endpoint.name, e.what()));
  }
}

}  // namespace citl
