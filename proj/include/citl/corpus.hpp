#pragma once

// Raw request ingestion, filtering, seeded splitting and export of
// (task, best solution) pairs for fine-tuning.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "citl/domain.hpp"
#include "citl/model_gateway.hpp"
#include "citl/prompt_kit.hpp"

namespace citl {

struct RawRecord {
  std::string id;
  std::string query_text;
  std::optional<std::string> language_tag;
  nlohmann::json metadata = nlohmann::json::object();
};

/// JSON lines; the text is read from query_text, text, query or prompt and
/// the language from language_tag or language. Other keys become metadata.
std::vector<RawRecord> parse_raw_records(std::string_view text);
std::vector<RawRecord> load_raw_records(const std::filesystem::path& path);

/// Character/stop-word heuristic.
bool looks_english(std::string_view text);

/// Keyword heuristic for "asks for a website or web app".
bool looks_like_website_request(std::string_view text);

struct FilterDecision {
  std::string id;
  bool kept = false;
  std::string reason;  // kept | non_english | not_website | undecidable | duplicate_id | empty
};

struct FilterResult {
  std::vector<Task> tasks;
  std::vector<FilterDecision> decisions;
};

/// With a gateway and endpoint the website check is a yes/no model call;
/// otherwise the keyword heuristic decides. Throws EmptyInput for no records.
FilterResult ingest_and_filter(const std::vector<RawRecord>& records, ModelGateway* gateway = nullptr,
                               std::shared_ptr<const EndpointConfig> filter_endpoint = nullptr);

struct SplitSpec {
  int train = 1200;
  int validation = 200;
  int test = 600;
  int sample_size = 2000;
  std::uint64_t seed = 7;

  void validate() const;  // throws ConfigError
};

struct SplitResult {
  std::vector<Task> train;
  std::vector<Task> validation;
  std::vector<Task> test;

  std::vector<Task> all() const;
};

/// Seeded uniform sample of sample_size tasks, assigned train, validation,
/// test in that order. Throws PoolTooSmall.
SplitResult split(const std::vector<Task>& tasks, const SplitSpec& spec);

/// Uniform integer in [0, bound) from a 64-bit Mersenne Twister, by
/// rejection so the result does not depend on the standard library.
std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound);

std::vector<Task> parse_tasks(std::string_view jsonl);
std::vector<Task> load_tasks(const std::filesystem::path& path);
std::string dump_tasks(const std::vector<Task>& tasks);

struct DistillationExport {
  std::vector<nlohmann::json> pairs;
  std::vector<nlohmann::json> manifest;  // one entry per skipped failed run
};

/// One pair per successful run of the selected split (nullopt: every run). With `wrapped` the
/// prompt is the full generator prompt instead of the raw task text. Throws
/// NoEligibleRuns when nothing can be exported.
DistillationExport export_distillation(const std::vector<RunRecord>& runs,
                                       std::optional<Split> split_filter = Split::train,
                                       bool wrapped = false, const PromptLibrary& prompts = builtin_prompts());

void write_distillation(const DistillationExport& out, const std::filesystem::path& pairs_path,
                        const std::filesystem::path& manifest_path);

}  // namespace citl
