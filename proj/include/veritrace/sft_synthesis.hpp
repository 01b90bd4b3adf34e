#pragma once

// Turns verified search traces into SFT records: the winning attempt is
// merged into one natural chain of thought, a formal response is generated
// from it, and the response is re-verified against the ground truth before
// the record is kept. Also mixes the final dataset from its sources.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "veritrace/io.hpp"
#include "veritrace/llm_gateway.hpp"
#include "veritrace/problem_bank.hpp"
#include "veritrace/prompts.hpp"
#include "veritrace/trajectory_search.hpp"
#include "veritrace/verifier.hpp"

namespace veritrace {

enum class Provenance { Searched, UnconvertedMcq, GeneralDomain };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

struct SftRecord {
  std::string problem_id;
  std::string question;
  std::string complex_cot;  // empty exactly for unconverted MCQs
  std::string response;
  Provenance provenance = Provenance::Searched;

  bool operator==(const SftRecord&) const = default;
};

std::optional<std::string> validate(const SftRecord& r);
json to_json(const SftRecord& r);
SftRecord sft_from_json(const json& j);

/// Think-then-answer text for trainers, using the layout delimiters from
/// rl_reward. Unconverted MCQ records render as the bare response.
std::string render_training_text(const SftRecord& r);

/// Returns the first leftover marker of the search schema found in `text`
/// ("Inner Thinking", "Final Conclusion", JSON keys of the schema, layout
/// delimiters), if any.
std::optional<std::string> find_structured_marker(std::string_view text);

struct SynthesisConfig {
  int merge_attempts = 3;
  int response_attempts = 3;
  double temperature = kGenerativeTemperature;
  int max_output_tokens = 4096;
  std::size_t concurrency = 4;
};

struct StepOutcome {
  std::optional<std::string> text;
  int attempts = 0;
  std::string failure;  // last failure when text is empty
};

/// Serializes the winning path into the merge prompt and returns the
/// reply's "NaturalReasoning" field. Replies that are not JSON, lack the
/// field, are blank or still contain schema markers are retried.
/// Throws ArgumentError when the trace did not succeed.
StepOutcome merge_cot(const VerifiableProblem& problem, const SearchTrace& trace, ChatBackend& gen,
                      const PromptLibrary& prompts, const SynthesisConfig& cfg = {});

/// Raw reply to the final-response prompt; blank replies are retried.
/// Throws ArgumentError for an empty chain of thought.
StepOutcome generate_response(std::string_view question, std::string_view complex_cot, ChatBackend& gen,
                              const PromptLibrary& prompts, const SynthesisConfig& cfg = {});

struct SynthesisDrop {
  std::string problem_id;
  std::string stage;  // "merge", "response", "consistency", "unknown_problem"
  std::string reason;
};

struct SynthesisReport {
  std::size_t traces = 0;
  std::size_t successful_traces = 0;
  std::size_t records = 0;
  std::vector<SynthesisDrop> drops;

  json to_json() const;
};

struct SynthesisResult {
  std::vector<SftRecord> records;  // trace order
  SynthesisReport report;
};

/// Builds one searched record per successful trace. The response must pass
/// `verifier` against the problem's ground truth (a verifier error drops the
/// record too).
SynthesisResult synthesize(const std::vector<VerifiableProblem>& problems, const std::vector<SearchTrace>& traces,
                           ChatBackend& gen, const VerifierFn& verifier, const PromptLibrary& prompts,
                           const SynthesisConfig& cfg = {});

struct Recipe {
  std::size_t searched = 0;
  std::size_t unconverted_mcq = 0;
  std::size_t general_domain = 0;

  json to_json() const;
};

/// Question = MCQ text plus its options, response = gold option text,
/// no chain of thought.
SftRecord mcq_to_record(const McqRecord& mcq);

/// Seeded sample of each source, then a seeded shuffle of the union.
/// Throws ArgumentError naming the source when it holds fewer records than
/// requested, and for a problem id present in more than one sample.
std::vector<SftRecord> assemble_dataset(const std::vector<SftRecord>& searched,
                                        const std::vector<McqRecord>& unconverted_mcqs,
                                        const std::vector<SftRecord>& general, const Recipe& recipe,
                                        std::uint64_t seed);

using TokenCounter = std::function<std::size_t(std::string_view)>;

std::size_t whitespace_token_count(std::string_view text);

struct DatasetStats {
  std::size_t record_count = 0;
  double mean_cot_tokens = 0.0;  // over records that carry a chain of thought
  double mean_response_tokens = 0.0;
  std::map<std::string, std::size_t> provenance_counts;
  std::string token_counter = "whitespace";

  json to_json() const;
};

DatasetStats compute_stats(const std::vector<SftRecord>& records, const TokenCounter& counter = whitespace_token_count,
                           std::string counter_name = "whitespace");

/// Writes JSON-lines atomically and returns the statistics.
DatasetStats emit(const std::vector<SftRecord>& records, const std::filesystem::path& path,
                  const TokenCounter& counter = whitespace_token_count, std::string counter_name = "whitespace");

/// Throws IoError naming the line for malformed or invalid records.
std::vector<SftRecord> ingest_sft(const std::filesystem::path& path);

}  // namespace veritrace
