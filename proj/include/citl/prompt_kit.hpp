#pragma once

// Prompt templates and the parsers for everything the models send back.
//
// Templates are byte-identical copies of the shipped prompts/*.txt files,
// compiled into the library. A directory override (config key prompts.dir)
// can replace any of them at runtime; overrides must keep the same
// placeholder set.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "citl/error.hpp"

namespace citl {

enum class TemplateId {
  generator,
  visual_critic,
  code_critic,
  improver,
  judge_code,
  judge_visual,
  judge_single,
  refine_no_critic,
  critique_classifier,
};

inline constexpr std::array k_all_templates = {
    TemplateId::generator,    TemplateId::visual_critic,    TemplateId::code_critic,
    TemplateId::improver,     TemplateId::judge_code,       TemplateId::judge_visual,
    TemplateId::judge_single, TemplateId::refine_no_critic, TemplateId::critique_classifier,
};

std::string_view to_string(TemplateId id);
TemplateId parse_template_id(std::string_view name);  // throws UnknownTemplate

/// Placeholder names (without braces) a template declares.
std::vector<std::string> declared_placeholders(TemplateId id);

/// Placeholder names of the form {name} actually present in a body.
std::vector<std::string> placeholders_in(std::string_view body);

using Bindings = std::map<std::string, std::string, std::less<>>;

class PromptLibrary {
 public:
  /// The built-in templates.
  PromptLibrary();

  /// Built-ins overridden by any `<id>.txt` found in `dir`. Throws ConfigError
  /// when an override's placeholder set differs from the template's.
  static PromptLibrary with_overrides(const std::filesystem::path& dir);

  std::string_view body(TemplateId id) const;

  /// Substitutes every placeholder in one pass; bound values are inserted
  /// verbatim and never re-scanned. Bindings must cover exactly the
  /// template's placeholders (MissingBinding otherwise).
  std::string render(TemplateId id, const Bindings& bindings) const;

  /// Convenience overload taking the template by name (UnknownTemplate).
  std::string render(std::string_view id, const Bindings& bindings) const;

 private:
  std::map<TemplateId, std::string> bodies_;
};

/// The process-wide built-in library.
const PromptLibrary& builtin_prompts();

// ---------------------------------------------------------------------------
// Response parsing

/// Removes reasoning preambles: everything up to the last </think> marker
/// (with or without an opening <think>) is dropped.
std::string strip_reasoning(std::string_view response);

/// Contents of the last properly closed ```html fence, trimmed.
std::string extract_html(std::string_view response);

/// Inner text of the last well-formed <tag>...</tag> pair, trimmed.
std::string extract_tagged(std::string_view response, std::string_view tag);

enum class JudgeDimension { task_accomplishment, code_quality, aesthetic_quality };
std::string_view to_string(JudgeDimension d);

/// Scores from a judge's <summary> JSON block, in the order requested.
/// Accepts quoted numerals and decimals; trailing commas are tolerated since
/// the judge prompt's own example has them.
std::pair<double, double> parse_judge_summary(std::string_view response,
                                              std::pair<JudgeDimension, JudgeDimension> expected);

/// Score from the last <score> block.
double parse_single_score(std::string_view response);

enum class CritiqueCategory {
  VisualPolish,
  Interactivity,
  MissingElements,
  Typography,
  Components,
  Responsive,
  Content,
  Implementation,
};

inline constexpr std::array k_all_categories = {
    CritiqueCategory::VisualPolish, CritiqueCategory::Interactivity,
    CritiqueCategory::MissingElements, CritiqueCategory::Typography,
    CritiqueCategory::Components, CritiqueCategory::Responsive,
    CritiqueCategory::Content, CritiqueCategory::Implementation,
};

std::string_view to_string(CritiqueCategory c);      // short name, e.g. "VisualPolish"
std::string_view classifier_label(CritiqueCategory c);  // label used in the classifier prompt

/// Maps a classifier answer onto one of the eight labels.
CritiqueCategory parse_category(std::string_view response);

}  // namespace citl
