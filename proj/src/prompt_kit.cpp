#include "citl/prompt_kit.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <span>

#include <fmt/format.h>
#include <json.hpp>

#include "citl/domain.hpp"
#include "citl/util.hpp"

namespace citl {

namespace detail {
std::span<const std::pair<std::string_view, std::string_view>> embedded_prompts();
}

namespace {

constexpr std::pair<TemplateId, std::string_view> k_template_names[] = {
    {TemplateId::generator, "generator"},
    {TemplateId::visual_critic, "visual_critic"},
    {TemplateId::code_critic, "code_critic"},
    {TemplateId::improver, "improver"},
    {TemplateId::judge_code, "judge_code"},
    {TemplateId::judge_visual, "judge_visual"},
    {TemplateId::judge_single, "judge_single"},
    {TemplateId::refine_no_critic, "refine_no_critic"},
    {TemplateId::critique_classifier, "critique_classifier"},
};

bool is_placeholder_char(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }

// Length of a {name} placeholder starting at body[pos], or 0.
std::size_t placeholder_length(std::string_view body, std::size_t pos) {
  if (body[pos] != '{') return 0;
  std::size_t end = pos + 1;
  while (end < body.size() && is_placeholder_char(body[end])) ++end;
  if (end == pos + 1 || end >= body.size() || body[end] != '}') return 0;
  return end - pos + 1;
}

std::set<std::string> placeholder_set(std::string_view body) {
  const auto names = placeholders_in(body);
  return {names.begin(), names.end()};
}

}  // namespace

std::string_view to_string(TemplateId id) {
  for (const auto& [value, name] : k_template_names) {
    if (value == id) return name;
  }
  return "?";
}

TemplateId parse_template_id(std::string_view name) {
  for (const auto& [value, n] : k_template_names) {
    if (n == name) return value;
  }
  throw UnknownTemplate(fmt::format("unknown template '{}'", name));
}

std::vector<std::string> declared_placeholders(TemplateId id) {
  switch (id) {
    case TemplateId::generator:
    case TemplateId::visual_critic:
      return {"problem"};
    case TemplateId::code_critic:
      return {"problem", "answer", "visual_feedback"};
    case TemplateId::improver:
      return {"problem", "answer", "critique"};
    case TemplateId::judge_code:
    case TemplateId::judge_visual:
      return {};
    case TemplateId::judge_single:
    case TemplateId::refine_no_critic:
      return {"problem", "answer"};
    case TemplateId::critique_classifier:
      return {"critique_text"};
  }
  return {};
}

std::vector<std::string> placeholders_in(std::string_view body) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (const auto len = placeholder_length(body, i)) {
      out.emplace_back(body.substr(i + 1, len - 2));
      i += len - 1;
    }
  }
  return out;
}

PromptLibrary::PromptLibrary() {
  for (const auto& [name, body] : detail::embedded_prompts()) {
    bodies_[parse_template_id(name)] = std::string(body);
  }
}

PromptLibrary PromptLibrary::with_overrides(const std::filesystem::path& dir) {
  PromptLibrary lib;
  for (TemplateId id : k_all_templates) {
    const auto file = dir / (std::string(to_string(id)) + ".txt");
    if (!std::filesystem::exists(file)) continue;
    std::string body = read_file(file);
    const auto declared = declared_placeholders(id);
    if (placeholder_set(body) != std::set<std::string>(declared.begin(), declared.end())) {
      throw ConfigError(fmt::format("prompt override {} does not use the placeholders of '{}'",
                                    file.string(), to_string(id)));
    }
    lib.bodies_[id] = std::move(body);
  }
  return lib;
}

std::string_view PromptLibrary::body(TemplateId id) const { return bodies_.at(id); }

std::string PromptLibrary::render(TemplateId id, const Bindings& bindings) const {
  const auto declared = declared_placeholders(id);
  for (const auto& name : declared) {
    if (!bindings.contains(name)) {
      throw MissingBinding(fmt::format("template '{}' needs {{{}}}", to_string(id), name));
    }
  }
  for (const auto& [name, value] : bindings) {
    if (std::find(declared.begin(), declared.end(), name) == declared.end()) {
      throw UnexpectedBinding(fmt::format("template '{}' has no {{{}}}", to_string(id), name));
    }
  }

  const std::string_view body = this->body(id);
  std::string out;
  out.reserve(body.size() + 1024);
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (const auto len = placeholder_length(body, i)) {
      const auto name = body.substr(i + 1, len - 2);
      if (auto it = bindings.find(name); it != bindings.end()) {
        out += it->second;
        i += len - 1;
        continue;
      }
    }
    out.push_back(body[i]);
  }
  return out;
}

std::string PromptLibrary::render(std::string_view id, const Bindings& bindings) const {
  return render(parse_template_id(id), bindings);
}

const PromptLibrary& builtin_prompts() {
  static const PromptLibrary lib;
  return lib;
}

// ---------------------------------------------------------------------------

std::string strip_reasoning(std::string_view response) {
  constexpr std::string_view close = "</think>";
  if (const auto pos = response.rfind(close); pos != std::string_view::npos) {
    return std::string(response.substr(pos + close.size()));
  }
  // An unterminated <think> block means the model never left its preamble.
  if (const auto open = response.find("<think>"); open != std::string_view::npos) {
    return std::string(response.substr(0, open));
  }
  return std::string(response);
}

std::string extract_html(std::string_view raw) {
  const std::string text = strip_reasoning(raw);
  const std::string_view s = text;
  std::optional<std::string_view> last;
  std::size_t pos = 0;
  while (true) {
    std::size_t open = std::string_view::npos;
    // Find the next opening fence: ```html (any case) followed only by spaces
    // up to the end of the line.
    for (std::size_t p = s.find("```", pos); p != std::string_view::npos; p = s.find("```", p + 3)) {
      if (!starts_with_icase(s.substr(p + 3), "html")) continue;
      std::size_t q = p + 7;
      while (q < s.size() && (s[q] == ' ' || s[q] == '\t' || s[q] == '\r')) ++q;
      if (q < s.size() && s[q] == '\n') {
        open = q + 1;
        break;
      }
    }
    if (open == std::string_view::npos) break;

    // The closing fence starts a line.
    std::size_t close = std::string_view::npos;
    for (std::size_t p = s.find("```", open); p != std::string_view::npos; p = s.find("```", p + 3)) {
      std::size_t line_start = p;
      while (line_start > open && (s[line_start - 1] == ' ' || s[line_start - 1] == '\t')) --line_start;
      if (line_start == open || s[line_start - 1] == '\n') {
        close = p;
        break;
      }
    }
    if (close == std::string_view::npos) break;
    last = s.substr(open, close - open);
    pos = close + 3;
  }
  if (!last) throw NoCodeBlock("no closed ```html block in response");
  return std::string(trim(*last));
}

std::string extract_tagged(std::string_view raw, std::string_view tag) {
  if (tag.empty() || !std::all_of(tag.begin(), tag.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
      })) {
    throw TagNotFound(fmt::format("invalid tag name '{}'", tag));
  }
  const std::string text = strip_reasoning(raw);
  const std::string open = fmt::format("<{}>", tag);
  const std::string close = fmt::format("</{}>", tag);
  const auto end = text.rfind(close);
  if (end == std::string::npos) throw TagNotFound(fmt::format("no </{}> in response", tag));
  const auto start = text.rfind(open, end);
  if (start == std::string::npos) throw TagNotFound(fmt::format("no <{}> before </{}>", tag, tag));
  const auto inner = std::string_view(text).substr(start + open.size(), end - start - open.size());
  return std::string(trim(inner));
}

std::string_view to_string(JudgeDimension d) {
  switch (d) {
    case JudgeDimension::task_accomplishment:
      return "task_accomplishment";
    case JudgeDimension::code_quality:
      return "code_quality";
    case JudgeDimension::aesthetic_quality:
      return "aesthetic_quality";
  }
  return "?";
}

namespace {

// Drops commas that directly precede a closing brace or bracket, outside of
// string literals.
std::string strip_trailing_commas(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      out.push_back(c);
      if (c == '\\' && i + 1 < s.size()) {
        out.push_back(s[++i]);
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == ',') {
      std::size_t j = i + 1;
      while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j < s.size() && (s[j] == '}' || s[j] == ']')) continue;
    }
    out.push_back(c);
  }
  return out;
}

std::string_view strip_json_fence(std::string_view s) {
  s = trim(s);
  if (s.starts_with("```")) {
    const auto nl = s.find('\n');
    const auto end = s.rfind("```");
    if (nl != std::string_view::npos && end != std::string_view::npos && end > nl) {
      s = trim(s.substr(nl + 1, end - nl - 1));
    }
  }
  return s;
}

// "7", "7.5", "7/10" and " 8 " are all numerals; anything else is not.
std::optional<double> parse_score_text(std::string_view text) {
  text = trim(text);
  if (const auto slash = text.find('/'); slash != std::string_view::npos) {
    if (trim(text.substr(slash + 1)) != "10") return std::nullopt;
    text = text.substr(0, slash);
  }
  return parse_number(text);
}

double checked_score(double value, std::string_view what) {
  if (!in_score_range(value)) {
    throw ScoreOutOfRange(fmt::format("{} score {} outside [1, 10]", what, value));
  }
  return value;
}

double summary_score(const nlohmann::json& summary, JudgeDimension dim) {
  const auto key = std::string(to_string(dim));
  const auto it = summary.find(key);
  if (it == summary.end() || it->is_null()) {
    throw MissingDimension(fmt::format("summary lacks '{}'", key));
  }
  const nlohmann::json* node = &*it;
  if (node->is_object()) {
    const auto score = node->find("score");
    if (score == node->end() || score->is_null()) {
      throw MissingDimension(fmt::format("summary '{}' has no score", key));
    }
    node = &*score;
  }
  std::optional<double> value;
  if (node->is_number()) {
    value = node->get<double>();
  } else if (node->is_string()) {
    value = parse_score_text(node->get<std::string>());
  }
  if (!value) throw MalformedSummary(fmt::format("'{}' score is not a number: {}", key, node->dump()));
  return checked_score(*value, key);
}

}  // namespace

std::pair<double, double> parse_judge_summary(std::string_view response,
                                              std::pair<JudgeDimension, JudgeDimension> expected) {
  const std::string block = extract_tagged(response, "summary");
  const std::string cleaned = strip_trailing_commas(strip_json_fence(block));
  const auto summary = nlohmann::json::parse(cleaned, nullptr, /*allow_exceptions=*/false);
  if (summary.is_discarded() || !summary.is_object()) {
    throw MalformedSummary("summary block is not a JSON object");
  }
  return {summary_score(summary, expected.first), summary_score(summary, expected.second)};
}

double parse_single_score(std::string_view response) {
  const std::string block = extract_tagged(response, "score");
  const auto value = parse_score_text(block);
  if (!value) throw NotANumber(fmt::format("score '{}' is not a number", block));
  return checked_score(*value, "single");
}

// ---------------------------------------------------------------------------

namespace {

struct CategoryInfo {
  CritiqueCategory category;
  std::string_view name;
  std::string_view label;
  std::string_view short_label;
};

constexpr CategoryInfo k_categories[] = {
    {CritiqueCategory::VisualPolish, "VisualPolish", "Visual Design & Polish", "Visual Polish"},
    {CritiqueCategory::Interactivity, "Interactivity", "Interactivity & Feedback", "Interactivity"},
    {CritiqueCategory::MissingElements, "MissingElements", "Missing Critical Elements", "Missing Elements"},
    {CritiqueCategory::Typography, "Typography", "Typography & Readability", "Typography"},
    {CritiqueCategory::Components, "Components", "Component Design", "Components"},
    {CritiqueCategory::Responsive, "Responsive", "Responsive Design", "Responsive"},
    {CritiqueCategory::Content, "Content", "Content & Structure", "Content"},
    {CritiqueCategory::Implementation, "Implementation", "Implementation Gaps", "Implementation"},
};

// Lowercase, '&' spelled "and", punctuation dropped, single spaces.
std::string normalize_label(std::string_view s) {
  std::string spaced;
  for (char c : s) {
    if (c == '&') {
      spaced += " and ";
    } else if (std::isalnum(static_cast<unsigned char>(c))) {
      spaced.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      spaced.push_back(' ');
    }
  }
  std::string out;
  for (char c : spaced) {
    if (c == ' ' && (out.empty() || out.back() == ' ')) continue;
    out.push_back(c);
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

bool matches_label(std::string_view normalized_answer, std::string_view label) {
  const std::string l = normalize_label(label);
  if (!normalized_answer.starts_with(l)) return false;
  return normalized_answer.size() == l.size() || normalized_answer[l.size()] == ' ';
}

}  // namespace

std::string_view to_string(CritiqueCategory c) {
  for (const auto& info : k_categories) {
    if (info.category == c) return info.name;
  }
  return "?";
}

std::string_view classifier_label(CritiqueCategory c) {
  for (const auto& info : k_categories) {
    if (info.category == c) return info.label;
  }
  return "?";
}

CritiqueCategory parse_category(std::string_view raw) {
  const std::string stripped = strip_reasoning(raw);
  std::string_view text = trim(stripped);
  // Only the first non-empty line after the "Category:" prefix is considered.
  if (starts_with_icase(text, "category")) {
    auto rest = trim(text.substr(8));
    if (!rest.empty() && rest.front() == ':') text = trim(rest.substr(1));
  }
  if (const auto nl = text.find('\n'); nl != std::string_view::npos) text = text.substr(0, nl);
  std::string answer = normalize_label(text);
  // Tolerate a list number ("1. Visual Design & Polish").
  if (!answer.empty() && std::isdigit(static_cast<unsigned char>(answer.front()))) {
    const auto sp = answer.find(' ');
    if (sp != std::string::npos && sp <= 2) answer.erase(0, sp + 1);
  }
  for (const auto& info : k_categories) {
    if (matches_label(answer, info.label)) return info.category;
  }
  for (const auto& info : k_categories) {
    if (matches_label(answer, info.short_label) || answer == normalize_label(info.name)) {
      return info.category;
    }
  }
  throw Unclassifiable(fmt::format("no category matches '{}'", trim(text)));
}

}  // namespace citl
