#include "citl/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "citl/json_io.hpp"
#include "citl/util.hpp"

namespace citl {

using nlohmann::json;

namespace {

template <typename F>
void for_each_line(std::string_view text, F f) {
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    const auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (!line.empty()) f(line, line_no);
  }
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (const char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || u >= 0x80 || c == '\'') {
      current += static_cast<char>(std::tolower(u));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

const std::set<std::string, std::less<>>& english_stop_words() {
  static const std::set<std::string, std::less<>> words = {
      "a",    "an",   "the",  "and",  "or",   "of",   "to",    "in",    "on",   "for",  "with",
      "me",   "my",   "i",    "you",  "your", "it",   "is",    "are",   "that", "this", "what",
      "can",  "please", "make", "build", "create", "design", "write", "show", "which", "where", "how",
      "should", "would", "like", "want", "need", "from", "by", "at", "as", "be", "we", "our",
  };
  return words;
}

const std::set<std::string, std::less<>>& website_keywords() {
  static const std::set<std::string, std::less<>> words = {
      "website",   "websites",  "site",     "webpage",  "webpages", "page",      "pages",     "web",
      "webapp",    "app",       "apps",     "application", "dashboard", "portfolio", "landing",  "homepage",
      "html",      "css",       "tailwind", "ui",       "frontend", "front",     "interface", "layout",
      "form",      "blog",      "store",    "shop",     "ecommerce", "clone",    "game",      "calculator",
      "timer",     "tracker",   "todo",     "navbar",   "component", "components", "widget",  "editor",
      "visualizer", "simulator", "generator", "quiz",   "chat",     "gallery",   "calendar",  "player",
  };
  return words;
}

std::string filter_prompt(std::string_view text) {
  return fmt::format(
      "Does the following user request ask for a website, web page, web application or other browser-based "
      "interface to be built? Answer with a single word, yes or no.\n\nRequest:\n{}\n",
      text);
}

std::optional<bool> parse_yes_no(std::string_view response) {
  const auto words = words_of(strip_reasoning(response));
  for (const auto& w : words) {
    if (w == "yes") return true;
    if (w == "no") return false;
    if (w == "answer") continue;
    break;
  }
  return std::nullopt;
}

}  // namespace

std::vector<RawRecord> parse_raw_records(std::string_view text) {
  std::vector<RawRecord> records;
  for_each_line(text, [&](std::string_view line, int line_no) {
    json row = json::parse(line, nullptr, false);
    if (!row.is_object()) throw ConfigError(fmt::format("records line {}: not a JSON object", line_no));
    RawRecord r;
    if (row.contains("id")) {
      r.id = row["id"].is_string() ? row["id"].get<std::string>() : row["id"].dump();
      row.erase("id");
    } else {
      r.id = fmt::format("rec_{:06}", line_no);
    }
    for (const char* key : {"query_text", "text", "query", "prompt"}) {
      if (row.contains(key) && row[key].is_string()) {
        r.query_text = row[key].get<std::string>();
        row.erase(key);
        break;
      }
    }
    for (const char* key : {"language_tag", "language"}) {
      if (row.contains(key) && row[key].is_string()) {
        r.language_tag = row[key].get<std::string>();
        row.erase(key);
        break;
      }
    }
    r.metadata = std::move(row);
    records.push_back(std::move(r));
  });
  return records;
}

std::vector<RawRecord> load_raw_records(const std::filesystem::path& path) { return parse_raw_records(read_file(path)); }

bool looks_english(std::string_view text) {
  std::size_t ascii_letters = 0;
  std::size_t other_letters = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto u = static_cast<unsigned char>(text[i]);
    if (std::isalpha(u)) {
      ++ascii_letters;
    } else if (u >= 0xC0) {
      ++other_letters;  // lead byte of a multi-byte UTF-8 sequence
    }
  }
  const std::size_t letters = ascii_letters + other_letters;
  if (letters == 0) return false;
  if (static_cast<double>(ascii_letters) / static_cast<double>(letters) < 0.9) return false;
  const auto words = words_of(text);
  if (words.size() < 3) return true;
  const auto& stop = english_stop_words();
  return std::any_of(words.begin(), words.end(), [&](const std::string& w) { return stop.contains(w); });
}

bool looks_like_website_request(std::string_view text) {
  const auto& keywords = website_keywords();
  const auto words = words_of(text);
  return std::any_of(words.begin(), words.end(), [&](const std::string& w) { return keywords.contains(w); });
}

FilterResult ingest_and_filter(const std::vector<RawRecord>& records, ModelGateway* gateway,
                               std::shared_ptr<const EndpointConfig> filter_endpoint) {
  if (records.empty()) throw EmptyInput("ingest_and_filter: no records");
  const bool use_model = gateway && filter_endpoint;
  FilterResult result;
  std::set<std::string, std::less<>> seen;
  for (const auto& r : records) {
    FilterDecision d{r.id, false, ""};
    const auto text = trim(r.query_text);
    if (seen.contains(r.id)) {
      d.reason = "duplicate_id";
    } else if (text.empty()) {
      d.reason = "empty";
    } else if (r.language_tag ? !starts_with_icase(*r.language_tag, "en") : !looks_english(text)) {
      d.reason = "non_english";
    } else if (use_model) {
      try {
        ModelRequest request;
        request.user_parts.push_back(ContentPart::from_text(filter_prompt(text)));
        request.endpoint = filter_endpoint;
        request.role = Role::filter;
        request.ledger_key = "corpus/filter";
        const auto answer = parse_yes_no(gateway->complete(request).text);
        d.reason = !answer ? "undecidable" : (*answer ? "kept" : "not_website");
      } catch (const Error& e) {
        spdlog::warn("record {}: filter call failed: {}", r.id, e.what());
        d.reason = "undecidable";
      }
    } else {
      d.reason = looks_like_website_request(text) ? "kept" : "not_website";
    }
    d.kept = d.reason == "kept";
    seen.insert(r.id);
    spdlog::debug("record {}: {}", r.id, d.reason);
    if (d.kept) result.tasks.push_back(Task{r.id, std::string(text), Split::unassigned});
    result.decisions.push_back(std::move(d));
  }
  return result;
}

void SplitSpec::validate() const {
  if (train < 0 || validation < 0 || test < 0) throw ConfigError("split sizes must be >= 0");
  if (train + validation + test != sample_size) {
    throw ConfigError(fmt::format("split sizes {}+{}+{} do not add up to sample_size {}", train, validation, test,
                                  sample_size));
  }
}

std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
  if (bound <= 1) return 0;
  // Largest multiple of bound representable, to avoid modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

std::vector<Task> SplitResult::all() const {
  std::vector<Task> out = train;
  out.insert(out.end(), validation.begin(), validation.end());
  out.insert(out.end(), test.begin(), test.end());
  return out;
}

SplitResult split(const std::vector<Task>& tasks, const SplitSpec& spec) {
  spec.validate();
  if (tasks.size() < static_cast<std::size_t>(spec.sample_size)) {
    throw PoolTooSmall(fmt::format("pool of {} tasks cannot supply a sample of {}", tasks.size(), spec.sample_size));
  }
  std::vector<std::size_t> order(tasks.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(spec.seed);
  // Partial Fisher-Yates: the first sample_size slots become the sample.
  for (std::size_t i = 0; i < static_cast<std::size_t>(spec.sample_size); ++i) {
    const auto j = i + bounded_draw(rng, order.size() - i);
    std::swap(order[i], order[j]);
  }
  SplitResult out;
  for (int i = 0; i < spec.sample_size; ++i) {
    Task t = tasks[order[static_cast<std::size_t>(i)]];
    if (i < spec.train) {
      t.split = Split::train;
      out.train.push_back(std::move(t));
    } else if (i < spec.train + spec.validation) {
      t.split = Split::validation;
      out.validation.push_back(std::move(t));
    } else {
      t.split = Split::test;
      out.test.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<Task> parse_tasks(std::string_view jsonl) {
  std::vector<Task> tasks;
  for_each_line(jsonl, [&](std::string_view line, int line_no) {
    const json row = json::parse(line, nullptr, false);
    if (!row.is_object()) throw ConfigError(fmt::format("tasks line {}: not a JSON object", line_no));
    try {
      tasks.push_back(row.get<Task>());
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("tasks line {}: {}", line_no, e.what()));
    }
    if (tasks.back().text.empty()) throw ConfigError(fmt::format("tasks line {}: empty text", line_no));
  });
  return tasks;
}

std::vector<Task> load_tasks(const std::filesystem::path& path) { return parse_tasks(read_file(path)); }

std::string dump_tasks(const std::vector<Task>& tasks) {
  std::string out;
  for (const auto& t : tasks) out += json(t).dump() + "\n";
  return out;
}

DistillationExport export_distillation(const std::vector<RunRecord>& runs, std::optional<Split> split_filter,
                                       bool wrapped, const PromptLibrary& prompts) {
  DistillationExport out;
  for (const auto& run : runs) {
    if (split_filter && run.task.split != *split_filter) continue;
    const ScoredSolution* best = run.best();
    if (!run.succeeded() || !best) {
      json entry = {{"task_id", run.task.id}, {"reason", "no scored solution"}};
      if (run.failure) {
        entry["stage"] = run.failure->stage;
        entry["cycle"] = run.failure->cycle;
        entry["kind"] = run.failure->kind;
        entry["reason"] = run.failure->message;
      }
      out.manifest.push_back(std::move(entry));
      continue;
    }
    out.pairs.push_back({
        {"task_id", run.task.id},
        {"prompt", wrapped ? prompts.render(TemplateId::generator, {{"problem", run.task.text}}) : run.task.text},
        {"completion", best->solution.html},
        {"best_overall", *run.best_overall},
        {"best_cycle", run.best_cycle},
    });
  }
  if (out.pairs.empty()) throw NoEligibleRuns("no successful runs to export");
  return out;
}

void write_distillation(const DistillationExport& out, const std::filesystem::path& pairs_path,
                        const std::filesystem::path& manifest_path) {
  std::string pairs;
  for (const auto& p : out.pairs) pairs += p.dump() + "\n";
  write_file(pairs_path, pairs);
  json manifest = {{"exported", out.pairs.size()}, {"skipped", out.manifest}};
  write_file(manifest_path, manifest.dump(2) + "\n");
}

}  // namespace citl
