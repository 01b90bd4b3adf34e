#pragma once

// Verifier(y, y*) -> {True, False}: an LLM judge and a normalized
// exact-match baseline, plus an accuracy harness against human labels.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "veritrace/io.hpp"
#include "veritrace/llm_gateway.hpp"
#include "veritrace/prompts.hpp"

namespace veritrace {

enum class VerifyMethod { LlmJudge, ExactMatch };

std::string_view to_string(VerifyMethod m);

struct Verdict {
  bool value = false;
  VerifyMethod method = VerifyMethod::ExactMatch;
  std::optional<std::string> raw;    // judge reply (always set for LlmJudge)
  std::optional<std::string> error;  // judge failed or gave no usable answer

  bool is_error() const { return error.has_value(); }
};

/// True iff normalize_for_match(truth) is a non-empty substring of
/// normalize_for_match(response).
Verdict verify_exact(std::string_view response, std::string_view truth);

/// Maps a judge reply: contains "true" and not "false" -> true, the reverse
/// -> false, anything else -> nullopt. Case-insensitive.
std::optional<bool> map_judge_reply(std::string_view reply);

/// Renders the verifier prompt and asks the judge at temperature 0. An
/// ambiguous reply is retried once; a second ambiguous reply or a backend
/// failure yields an error verdict.
Verdict verify_llm(std::string_view response, std::string_view truth, ChatBackend& judge,
                   const PromptLibrary& prompts);

using VerifierFn = std::function<Verdict(std::string_view response, std::string_view truth)>;

VerifierFn make_exact_verifier();
/// The backend and library must outlive the returned function.
VerifierFn make_llm_verifier(ChatBackend& judge, const PromptLibrary& prompts);

struct AnnotatedSample {
  std::string problem_id;
  std::string model_answer;
  std::string ground_truth;
  bool human_label = false;
};

json to_json(const AnnotatedSample& s);
AnnotatedSample annotated_from_json(const json& j);
/// Throws IoError on malformed lines or empty fields.
std::vector<AnnotatedSample> load_annotated(const std::filesystem::path& path);

struct SampleOutcome {
  std::string problem_id;
  bool human_label = false;
  bool predicted = false;  // for errors: the opposite of the human label
  bool error = false;
  std::string error_message;
};

/// Accuracy against human labels. A judge error counts as a wrong
/// prediction (FN for a true label, FP for a false one) and is also listed
/// in `errors`, so accuracy == 1 - (fp + fn) / total exactly.
struct VerifierEvaluation {
  VerifyMethod method = VerifyMethod::ExactMatch;
  std::size_t total = 0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t errors = 0;
  double accuracy = 0.0;
  std::vector<SampleOutcome> samples;

  json to_json() const;
};

/// Throws ArgumentError when `samples` is empty.
VerifierEvaluation evaluate_verifier(const std::vector<AnnotatedSample>& samples, VerifyMethod method,
                                     const VerifierFn& verify, std::size_t concurrency = 1);

}  // namespace veritrace
