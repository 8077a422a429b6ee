#include <doctest.h>

#include <random>
#include <set>

#include <fmt/format.h>

#include "citl/prompt_kit.hpp"
#include "citl/util.hpp"

using namespace citl;

namespace {

const PromptLibrary& lib() { return builtin_prompts(); }

Bindings full_bindings(TemplateId id) {
  Bindings b;
  for (const auto& name : declared_placeholders(id)) b[name] = "value of " + name;
  return b;
}

}  // namespace

TEST_CASE("built-in templates are byte-identical to the shipped files") {
  for (TemplateId id : k_all_templates) {
    const auto file = std::filesystem::path(CITL_TEST_PROMPTS) / (std::string(to_string(id)) + ".txt");
    CAPTURE(to_string(id));
    CHECK(lib().body(id) == read_file(file));
  }
}

TEST_CASE("template openings") {
  CHECK(lib().body(TemplateId::generator).find("expert frontend web developer") != std::string_view::npos);
  CHECK(lib().body(TemplateId::visual_critic).find("analyzing the visual aspects of a website") != std::string_view::npos);
  CHECK(lib().body(TemplateId::code_critic).find("SCREENSHOT-FIRST EVALUATION") != std::string_view::npos);
  CHECK(lib().body(TemplateId::improver).find("improving an existing website based on a provided critique") !=
        std::string_view::npos);
  CHECK(lib().body(TemplateId::judge_code).find("evaluate the code implementation of a webpage") != std::string_view::npos);
  CHECK(lib().body(TemplateId::judge_visual).find("evaluate the screenshot of an implemented webpage") !=
        std::string_view::npos);
  CHECK(lib().body(TemplateId::judge_single).find("meticulous code reviewer and design analyst") != std::string_view::npos);
  CHECK(lib().body(TemplateId::refine_no_critic).find("improving an existing web page") != std::string_view::npos);
  CHECK(lib().body(TemplateId::critique_classifier).find("8 predefined categories") != std::string_view::npos);
}

TEST_CASE("each body declares exactly its placeholders") {
  for (TemplateId id : k_all_templates) {
    const auto found = placeholders_in(lib().body(id));
    const auto declared = declared_placeholders(id);
    CAPTURE(to_string(id));
    CHECK(std::set<std::string>(found.begin(), found.end()) == std::set<std::string>(declared.begin(), declared.end()));
  }
}

TEST_CASE("generator prompt wraps the task") {
  const auto text = lib().render(TemplateId::generator, {{"problem", "a landing page"}});
  CHECK(text.find("<user_request>\na landing page\n</user_request>") != std::string::npos);
  CHECK(placeholders_in(text).empty());
  CHECK(text.find("{problem}") == std::string::npos);
}

TEST_CASE("binding errors") {
  CHECK_THROWS_AS(lib().render(TemplateId::code_critic, {{"problem", "p"}, {"answer", "a"}}), MissingBinding);
  CHECK_THROWS_AS(lib().render(TemplateId::generator, {{"problem", "p"}, {"answer", "a"}}), UnexpectedBinding);
  CHECK_THROWS_AS(lib().render("nonexistent", {}), UnknownTemplate);
  CHECK(lib().render("generator", {{"problem", "p"}}) == lib().render(TemplateId::generator, {{"problem", "p"}}));
}

TEST_CASE("improver embeds the current answer in an html fence") {
  const auto text = lib().render(TemplateId::improver,
                                 {{"problem", "todo app"}, {"answer", "<p>CURRENT</p>"}, {"critique", "more color"}});
  CHECK(text.find("```html\n<p>CURRENT</p>\n```") != std::string::npos);
  CHECK(text.find("more color") != std::string::npos);
}

TEST_CASE("rendered templates never contain unresolved placeholders") {
  for (TemplateId id : k_all_templates) {
    const auto text = lib().render(id, full_bindings(id));
    CAPTURE(to_string(id));
    CHECK(placeholders_in(text).empty());
  }
}

TEST_CASE("bound values are inserted verbatim and not re-scanned") {
  const auto text = lib().render(TemplateId::improver,
                                 {{"problem", "{answer}"}, {"answer", "{critique}"}, {"critique", "x{problem}y"}});
  CHECK(text.find("{answer}") != std::string::npos);
  CHECK(text.find("x{problem}y") != std::string::npos);
}

TEST_CASE("prompt overrides") {
  const auto dir = std::filesystem::temp_directory_path() / "citl_prompt_override";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  write_file(dir / "generator.txt", "Build this in React: {problem}");
  const auto overridden = PromptLibrary::with_overrides(dir);
  CHECK(overridden.render(TemplateId::generator, {{"problem", "a clock"}}) == "Build this in React: a clock");
  CHECK(overridden.body(TemplateId::improver) == lib().body(TemplateId::improver));
  write_file(dir / "improver.txt", "no placeholders here");
  CHECK_THROWS_AS(PromptLibrary::with_overrides(dir), ConfigError);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------

TEST_CASE("extract_html") {
  CHECK(extract_html("intro\n```html\n<!DOCTYPE html><html></html>\n```") == "<!DOCTYPE html><html></html>");
  CHECK(extract_html("```html\n<p>one</p>\n```\nthen\n```html\n<p>two</p>\n```\n") == "<p>two</p>");
  CHECK_THROWS_AS(extract_html("```html\n<p>never closed</p>\n"), NoCodeBlock);
  CHECK_THROWS_AS(extract_html("no fences at all"), NoCodeBlock);
  CHECK_THROWS_AS(extract_html("```python\nprint(1)\n```"), NoCodeBlock);
  CHECK(extract_html("```HTML\n<b>x</b>\n```") == "<b>x</b>");
  CHECK(extract_html("<think>```html\ndraft\n```</think>\n```html\nfinal\n```") == "final");
  // a closed block followed by an unterminated one: the closed one wins
  CHECK(extract_html("```html\nA\n```\n```html\nB\n") == "A");
}

TEST_CASE("extract_html inverts a single fence") {
  std::mt19937 rng(3);
  const std::string alphabet = "<>/=\" abcdefghij\n\t{}#`";
  for (int i = 0; i < 200; ++i) {
    std::string doc;
    const int len = 1 + static_cast<int>(rng() % 200);
    for (int k = 0; k < len; ++k) doc.push_back(alphabet[rng() % alphabet.size()]);
    // fence-free documents only
    while (doc.find("``") != std::string::npos) doc.replace(doc.find("``"), 2, "`a");
    const std::string doc_trimmed(trim(doc));
    if (doc_trimmed.empty()) continue;
    CAPTURE(doc_trimmed);
    CHECK(extract_html("```html\n" + doc_trimmed + "\n```") == doc_trimmed);
  }
}

TEST_CASE("extract_tagged") {
  CHECK(extract_tagged("analysis... <critique>fix spacing</critique>", "critique") == "fix spacing");
  CHECK(extract_tagged("<critique>one</critique> and later <critique>two</critique>", "critique") == "two");
  CHECK_THROWS_AS(extract_tagged("<critique>never closed", "critique"), TagNotFound);
  CHECK_THROWS_AS(extract_tagged("nothing", "score"), TagNotFound);
  CHECK(extract_tagged("<think><review>draft</review></think><review>\n final \n</review>", "review") == "final");
}

TEST_CASE("strip_reasoning") {
  CHECK(strip_reasoning("<think>hmm</think>answer") == "answer");
  CHECK(strip_reasoning("hmm</think>answer") == "answer");
  CHECK(strip_reasoning("plain") == "plain");
}

TEST_CASE("parse_judge_summary") {
  using D = JudgeDimension;
  const std::pair code{D::task_accomplishment, D::code_quality};
  const std::pair visual{D::task_accomplishment, D::aesthetic_quality};

  const auto quoted = parse_judge_summary(
      R"(<summary>{"task_accomplishment": {"summary": "s", "score": "7"}, "code_quality": {"summary": "s", "score": "7"},}</summary>)",
      code);
  CHECK(quoted == std::pair{7.0, 7.0});

  const auto numeric = parse_judge_summary(
      R"(<summary>{"task_accomplishment": {"score": 6.5}, "aesthetic_quality": {"score": 8}}</summary>)", visual);
  CHECK(numeric == std::pair{6.5, 8.0});

  CHECK_THROWS_AS(parse_judge_summary(
                      R"(<summary>{"task_accomplishment": {"score": "11"}, "code_quality": {"score": "7"}}</summary>)",
                      code),
                  ScoreOutOfRange);
  CHECK_THROWS_AS(parse_judge_summary(R"(<summary>{"task_accomplishment": {"score": 7}}</summary>)", code),
                  MissingDimension);
  CHECK_THROWS_AS(parse_judge_summary("<summary>not json</summary>", code), MalformedSummary);
  CHECK_THROWS_AS(parse_judge_summary("no summary", code), TagNotFound);
  CHECK_THROWS_AS(parse_judge_summary(
                      R"(<summary>{"task_accomplishment": {"score": "high"}, "code_quality": {"score": 7}}</summary>)",
                      code),
                  MalformedSummary);
}

TEST_CASE("quoted and bare numerals agree") {
  using D = JudgeDimension;
  for (int v = 1; v <= 10; ++v) {
    const auto bare = fmt::format(R"(<summary>{{"task_accomplishment": {{"score": {0}}}, "code_quality": {{"score": {0}}}}}</summary>)", v);
    const auto quoted = fmt::format(R"(<summary>{{"task_accomplishment": {{"score": "{0}"}}, "code_quality": {{"score": "{0}"}}}}</summary>)", v);
    CHECK(parse_judge_summary(bare, {D::task_accomplishment, D::code_quality}) ==
          parse_judge_summary(quoted, {D::task_accomplishment, D::code_quality}));
  }
}

TEST_CASE("the judge prompt's own example block parses once filled in") {
  // The schema in the prompt has a trailing comma and quoted scores.
  std::string body(lib().body(TemplateId::judge_code));
  const auto start = body.rfind("<summary>");
  std::string example = body.substr(start);
  for (std::size_t p; (p = example.find("\"<Provide a score")) != std::string::npos;) {
    example.replace(p, example.find('>', p) + 2 - p, "\"8\"");
  }
  const auto r = parse_judge_summary(example, {JudgeDimension::task_accomplishment, JudgeDimension::code_quality});
  CHECK(r == std::pair{8.0, 8.0});
}

TEST_CASE("parse_single_score") {
  CHECK(parse_single_score("<review>ok</review><score>7</score>") == 7.0);
  CHECK(parse_single_score("<score>9.5</score>") == 9.5);
  CHECK_THROWS_AS(parse_single_score("<score>eleven</score>"), NotANumber);
  CHECK_THROWS_AS(parse_single_score("<score>0</score>"), ScoreOutOfRange);
  CHECK_THROWS_AS(parse_single_score("no tags"), TagNotFound);
}

TEST_CASE("parse_category") {
  CHECK(parse_category("Category: Visual Design & Polish") == CritiqueCategory::VisualPolish);
  CHECK(parse_category("typography & readability") == CritiqueCategory::Typography);
  CHECK_THROWS_AS(parse_category("Category: Performance"), Unclassifiable);
  CHECK(parse_category("Category: Content and Structure") == CritiqueCategory::Content);
  CHECK(parse_category("  category:   IMPLEMENTATION GAPS\nbecause...") == CritiqueCategory::Implementation);
}

TEST_CASE("all eight labels parse to distinct categories") {
  std::set<CritiqueCategory> seen;
  for (auto c : k_all_categories) {
    const auto label = std::string(classifier_label(c));
    CHECK(parse_category(label) == c);
    CHECK(parse_category("Category: " + label) == c);
    CHECK(lib().body(TemplateId::critique_classifier).find(label) != std::string_view::npos);
    seen.insert(parse_category(label));
  }
  CHECK(seen.size() == 8);
}

// ---------------------------------------------------------------------------
// Parsers either succeed or raise one of their documented errors.

namespace {

std::string random_text(std::mt19937_64& rng, const std::vector<std::string>& pieces) {
  std::string out;
  const int n = static_cast<int>(rng() % 12);
  for (int i = 0; i < n; ++i) {
    if (rng() % 3 == 0) {
      out.push_back(static_cast<char>(rng() % 256));
    } else {
      out += pieces[rng() % pieces.size()];
    }
  }
  return out;
}

template <typename Fn>
void fuzz(const std::vector<std::string>& pieces, std::uint64_t seed, Fn&& fn) {
  std::mt19937_64 rng(seed);
  for (int i = 0; i < 200; ++i) {
    const auto input = random_text(rng, pieces);
    try {
      fn(input);
    } catch (const Error&) {
    } catch (const std::exception& e) {
      FAIL("undocumented exception " << e.what() << " for input " << input);
    }
  }
}

}  // namespace

TEST_CASE("parsers survive fuzzed input") {
  const std::vector<std::string> pieces = {
      "```", "```html", "\n", "<critique>", "</critique>", "<summary>", "</summary>", "<score>", "</score>",
      "{", "}", "\"task_accomplishment\"", "\"code_quality\"", "\"aesthetic_quality\"", ":", ",", "\"score\"",
      "7", "11", "-3", "1e400", "\"8\"", "nan", "Category:", "Visual Design & Polish", "and", "<think>", "</think>",
      " ", "[", "]", "null", "\\", "\"", "/10"};
  fuzz(pieces, 1, [](const std::string& s) { (void)extract_html(s); });
  fuzz(pieces, 2, [](const std::string& s) { (void)extract_tagged(s, "critique"); });
  fuzz(pieces, 3, [](const std::string& s) {
    (void)parse_judge_summary(s, {JudgeDimension::task_accomplishment, JudgeDimension::code_quality});
  });
  fuzz(pieces, 4, [](const std::string& s) {
    const double v = parse_single_score(s);
    CHECK(v >= 1.0);
    CHECK(v <= 10.0);
  });
  fuzz(pieces, 5, [](const std::string& s) { (void)parse_category(s); });
}
