#pragma once

// Turns closed-set exam questions into verifiable open-ended problems:
// challenge probing with small models, a length filter, a suitability judge
// and an open-ended reformatter.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "veritrace/llm_gateway.hpp"
#include "veritrace/problem_bank.hpp"
#include "veritrace/prompts.hpp"

namespace veritrace {

struct ChallengeProbeResult {
  std::string mcq_id;
  /// Chosen label per probe; nullopt when the reply was unparseable or the
  /// call failed. Either case counts as incorrect.
  std::map<std::string, std::optional<std::string>> probe_answers;
  std::map<std::string, std::string> probe_errors;
  bool all_correct = false;
  std::size_t question_length = 0;
};

/// Extracts the chosen option letter from a free-form probe reply, accepting
/// only labels present in `valid_labels`.
std::optional<std::string> extract_answer_letter(std::string_view reply, const std::vector<std::string>& valid_labels);

/// Asks every probe the MCQ at temperature 0. With no probes configured the
/// result is all_correct = false so nothing is filtered.
ChallengeProbeResult probe_challenge(const McqRecord& mcq, const std::vector<NamedBackend>& probes,
                                     const PromptLibrary& prompts);

enum class FilterOutcome { Pass, TooSimple, AmbiguousAnswer, NotReformulatable };

std::string_view to_string(FilterOutcome v);

struct FilterVerdict {
  std::string mcq_id;
  FilterOutcome verdict = FilterOutcome::NotReformulatable;
  std::string raw_judge_output;
  std::string reason;  // set when the verdict was forced (unparseable, backend error)
};

/// Case-insensitive substring match, longest phrase first:
/// "Not Reformulatable", "Ambiguous Answer", "Too Simple", "Pass".
std::optional<FilterOutcome> match_filter_phrase(std::string_view judge_output);

FilterVerdict judge_suitability(const McqRecord& mcq, ChatBackend& judge, const PromptLibrary& prompts,
                                int max_attempts = 3);

struct ReformatResult {
  std::optional<VerifiableProblem> problem;
  std::string failure;
  int attempts = 0;
};

/// Reformats a Pass-verdict MCQ. The reply's JSON must carry
/// "Open-ended Verifiable Question" and "Standard Answer"; the produced
/// problem must satisfy the VerifiableProblem invariants.
ReformatResult reformat_open_ended(const McqRecord& mcq, ChatBackend& reformatter, const PromptLibrary& prompts,
                                   int max_attempts = 3, double temperature = kGenerativeTemperature);

struct CurationConfig {
  std::size_t min_question_chars = 120;
  int judge_attempts = 3;
  int reformat_attempts = 3;
  double reformat_temperature = kGenerativeTemperature;
  std::size_t concurrency = 4;
};

struct CurationBackends {
  std::vector<NamedBackend> probes;
  ChatBackend* judge = nullptr;
  ChatBackend* reformatter = nullptr;
};

enum class CurationStage { Probe, Length, Judge, Reformat, Duplicate };

std::string_view to_string(CurationStage s);

struct CurationDrop {
  std::string mcq_id;
  std::size_t input_index = 0;
  CurationStage stage = CurationStage::Probe;
  std::string reason;
};

struct CurationReport {
  std::size_t input = 0;
  std::size_t output = 0;
  std::map<CurationStage, std::size_t> dropped;
  std::map<FilterOutcome, std::size_t> judge_verdicts;
  std::vector<CurationDrop> drops;  // ordered by input index

  std::size_t dropped_at(CurationStage s) const {
    auto it = dropped.find(s);
    return it == dropped.end() ? 0 : it->second;
  }
  json to_json() const;
};

struct CurationResult {
  std::vector<VerifiableProblem> problems;
  CurationReport report;
};

/// probe -> length filter -> judge -> reformat, per record in bounded
/// parallel, then dedup by normalized question text. A failing record never
/// aborts the batch. Throws ArgumentError when judge or reformatter is null.
CurationResult run_curation(const std::vector<McqRecord>& mcqs, const CurationBackends& backends,
                            const CurationConfig& config, const PromptLibrary& prompts);

}  // namespace veritrace
