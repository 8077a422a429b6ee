#pragma once

// Test doubles shared by the unit tests and the acceptance suite.

#include <atomic>
#include <cmath>
#include <optional>
#include <functional>
#include <mutex>
#include <string>
#include <thread>

#include <fmt/format.h>

#include "citl/image.hpp"
#include "citl/model_gateway.hpp"
#include "citl/renderer.hpp"

namespace citl::testing {

// Distinctive fragments of each template, used to route scripted replies.
inline constexpr const char* k_match_generator = "implement a website in HTML and CSS";
inline constexpr const char* k_match_visual_critic = "analyzing the visual aspects of a website";
inline constexpr const char* k_match_code_critic = "analyzing the code of a website";
inline constexpr const char* k_match_improver = "improving an existing website based on a provided critique";
inline constexpr const char* k_match_judge_code = "evaluate the code implementation of a webpage";
inline constexpr const char* k_match_judge_visual = "evaluate the screenshot of an implemented webpage";
inline constexpr const char* k_match_judge_single = "meticulous code reviewer";
inline constexpr const char* k_match_refine = "improving an existing web page";
inline constexpr const char* k_match_classifier = "8 predefined categories";

inline std::string html_reply(std::string_view body_text) {
  return fmt::format(
      "Here is the page.\n\n```html\n<!DOCTYPE html>\n<html lang=\"en\">\n<body>\n<h1>{}</h1>\n</body>\n</html>\n```\n",
      body_text);
}

inline std::string critique_reply(std::string_view text) {
  return fmt::format("Analysis first.\n\n<critique>\n{}\n</critique>\n", text);
}

inline std::string code_judge_reply(double task, double quality) {
  return fmt::format(
      "Reasoning.\n<summary>\n{{\n  \"task_accomplishment\": {{\"summary\": \"ok\", \"score\": \"{}\"}},\n"
      "  \"code_quality\": {{\"summary\": \"ok\", \"score\": \"{}\"}},\n}}\n</summary>\n",
      task, quality);
}

inline std::string visual_judge_reply(double task, double aesthetic) {
  return fmt::format(
      "Reasoning.\n<summary>\n{{\n  \"task_accomplishment\": {{\"summary\": \"ok\", \"score\": {}}},\n"
      "  \"aesthetic_quality\": {{\"summary\": \"ok\", \"score\": {}}}\n}}\n</summary>\n",
      task, aesthetic);
}

inline std::shared_ptr<const EndpointConfig> endpoint(std::string name = "test", bool multimodal = true) {
  auto e = std::make_shared<EndpointConfig>();
  e->name = std::move(name);
  e->multimodal = multimodal;
  return e;
}

/// Backend answering through a callback; the callback must be thread-safe.
class FunctionBackend final : public ChatBackend {
 public:
  explicit FunctionBackend(std::function<BackendReply(const ModelRequest&)> fn) : fn_(std::move(fn)) {}
  BackendReply send(const ModelRequest& request) override {
    ++calls_;
    return fn_(request);
  }
  int calls() const { return calls_.load(); }

 private:
  std::function<BackendReply(const ModelRequest&)> fn_;
  std::atomic<int> calls_{0};
};

/// Renderer that paints a fixed-size image without a browser. Pages whose
/// text contains "BLANK" come back blank; "FAILRENDER" raises RenderTimeout.
class FakeRenderer final : public PageRenderer {
 public:
  Screenshot render(std::string_view html, const Viewport& viewport) override {
    ++renders_;
    if (html.find("FAILRENDER") != std::string_view::npos) throw RenderTimeout("scripted render failure");
    const int w = viewport.width;
    const int h = std::min(viewport.height, 200);
    RgbaImage image(w, h, 0xFFFFFFFFu);
    if (html.find("BLANK") == std::string_view::npos) {
      const auto hash = std::hash<std::string_view>{}(html);
      image.fill_rect(10, 10, w / 3, h / 2, 0x202020FFu | (static_cast<std::uint32_t>(hash & 0xFF) << 8));
    }
    Screenshot shot;
    shot.png = encode_png(image);
    shot.width = w;
    shot.height = h;
    shot.blank = is_blank(image);
    return shot;
  }
  int renders() const { return renders_.load(); }

 private:
  std::atomic<int> renders_{0};
};

/// Score carried by a page as "SCORE[x]", if any.
inline std::optional<double> marked_score(std::string_view text) {
  const auto open = text.find("SCORE[");
  if (open == std::string_view::npos) return std::nullopt;
  const auto close = text.find(']', open);
  if (close == std::string_view::npos) return std::nullopt;
  return std::stod(std::string(text.substr(open + 6, close - open - 6)));
}

/// Renderer that writes a page's marked score into pixel (0,0): red = 20 * score.
class MarkerRenderer final : public PageRenderer {
 public:
  Screenshot render(std::string_view html, const Viewport& viewport) override {
    RgbaImage image(viewport.width, std::min(viewport.height, 120), 0xFFFFFFFFu);
    image.fill_rect(0, 0, image.width / 2, image.height / 2, 0x010101FFu);
    if (const auto s = marked_score(html)) {
      image.set(0, 0, (static_cast<std::uint32_t>(std::lround(*s * 20)) << 24) | 0xFFu);
    }
    Screenshot shot;
    shot.png = encode_png(image);
    shot.width = image.width;
    shot.height = image.height;
    return shot;
  }
};

/// Judge answering from the markers: the code and single judges read the
/// page text, the visual judge reads the pixel MarkerRenderer wrote.
inline BackendReply marker_judge(const ModelRequest& request) {
  const std::string text = render_request_text(request);
  std::optional<double> from_text;
  std::optional<double> from_image;
  for (const auto& part : request.user_parts) {
    if (part.kind == ContentPart::Kind::text) {
      if (auto s = marked_score(part.text)) from_text = s;
    } else {
      const auto img = decode_png(part.image);
      if (const auto px = img.at(0, 0); (px >> 24) != 0x01) from_image = static_cast<double>(px >> 24) / 20.0;
    }
  }
  const TokenUsage usage{40, 10, false};
  if (text.find(k_match_judge_single) != std::string::npos) {
    return {fmt::format("<review>ok</review><score>{}</score>", from_text.value_or(5.0)), usage};
  }
  if (text.find(k_match_judge_code) != std::string::npos) {
    const double s = from_text.value_or(5.0);
    return {code_judge_reply(s, s), usage};
  }
  const double s = from_image.value_or(5.0);
  return {visual_judge_reply(s, s), usage};
}

inline bool browser_available() {
  return std::filesystem::exists(CITL_TEST_CHROMEDRIVER) && std::filesystem::exists(CITL_TEST_BROWSER);
}

inline WebDriverSettings test_browser_settings(int pool_size = 2) {
  WebDriverSettings s;
  s.driver_path = CITL_TEST_CHROMEDRIVER;
  s.browser_path = CITL_TEST_BROWSER;
  s.pool_size = pool_size;
  s.settle_seconds = 0.2;
  s.offline = true;
  s.offline_stylesheet = CITL_TEST_ASSETS "/offline.css";
  return s;
}

}  // namespace citl::testing
