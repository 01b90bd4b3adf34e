#pragma once

// Canonical data model shared by every stage, plus ingestion, train/RL
// splitting and evaluation-set decontamination.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "veritrace/io.hpp"

namespace veritrace {

/// A closed-set multiple-choice question. Option labels are single
/// uppercase letters starting at "A".
struct McqRecord {
  std::string id;
  std::string question;
  std::map<std::string, std::string> options;
  std::string answer_label;
  std::string source = "synthetic";  // exam corpus name or "synthetic"
  std::string language = "en";

  const std::string& answer_text() const { return options.at(answer_label); }

  bool operator==(const McqRecord&) const = default;
};

/// An open-ended question with a unique short ground-truth answer.
struct VerifiableProblem {
  std::string id;
  std::string question;
  std::string ground_truth;
  std::optional<std::string> origin_mcq_id;
  std::set<std::string> tags;

  bool operator==(const VerifiableProblem&) const = default;
};

struct BankSplit {
  std::vector<std::string> search_set;
  std::vector<std::string> rl_set;
  std::uint64_t seed = 0;

  bool operator==(const BankSplit&) const = default;
};

/// Returns the first violated invariant, if any.
std::optional<std::string> validate(const McqRecord& mcq);
std::optional<std::string> validate(const VerifiableProblem& problem);

/// True when `s` contains an option label such as "A)" or "(B".
bool contains_option_label(std::string_view s);

/// True when at least two lines of `s` look like enumerated options.
bool contains_option_list(std::string_view s);

json to_json(const McqRecord& mcq);
json to_json(const VerifiableProblem& problem);
json to_json(const BankSplit& split);
/// Throws ArgumentError on missing or mistyped fields.
McqRecord mcq_from_json(const json& j);
VerifiableProblem problem_from_json(const json& j);
BankSplit split_from_json(const json& j);

/// "A. text" lines in label order.
std::string render_options(const McqRecord& mcq);

struct IngestIssue {
  std::size_t line = 0;
  std::string id;
  std::string reason;
};

template <class Record>
struct IngestResult {
  std::vector<Record> records;
  std::vector<IngestIssue> issues;
};

/// Reads mcq.jsonl. Invalid or duplicate records are reported, not fatal.
IngestResult<McqRecord> ingest_mcqs(const std::filesystem::path& path);
/// Reads problems.jsonl with the same rules.
IngestResult<VerifiableProblem> ingest_problems(const std::filesystem::path& path);

void write_mcqs(const std::filesystem::path& path, const std::vector<McqRecord>& records);
void write_problems(const std::filesystem::path& path, const std::vector<VerifiableProblem>& records);

/// Seeded shuffle, then the first round-half-up(sft_fraction * N) ids go to
/// the search set and the rest to the RL set.
BankSplit split(const std::vector<VerifiableProblem>& problems, double sft_fraction, std::uint64_t seed);

struct DecontaminationOptions {
  std::size_t window = 64;
  bool include_answers = false;  // also scan ground_truth
  std::size_t concurrency = 1;
};

struct RemovedProblem {
  VerifiableProblem problem;
  std::size_t input_index = 0;
  std::size_t eval_index = 0;
  std::string evidence;  // normalized shared span, at least `window` chars
};

struct DecontaminationResult {
  std::vector<VerifiableProblem> kept;
  std::vector<RemovedProblem> removed;
};

/// Location of the first shared window: smallest offset in `text`, then
/// smallest eval index, then smallest offset in that eval text.
struct OverlapMatch {
  std::size_t text_pos = 0;
  std::size_t eval_index = 0;
  std::size_t eval_pos = 0;
};

/// Rolling-hash index over the normalized windows of a set of eval texts.
class OverlapIndex {
 public:
  OverlapIndex(const std::vector<std::string>& eval_texts, std::size_t window);

  /// `normalized` must already be passed through text::normalize_for_overlap.
  std::optional<OverlapMatch> first_match(std::string_view normalized) const;

  /// Widens a match to the maximal common run at the same alignment.
  std::string evidence(std::string_view normalized, const OverlapMatch& m) const;

  std::size_t window() const { return window_; }
  const std::vector<std::string>& normalized_evals() const { return evals_; }

 private:
  std::size_t window_;
  std::vector<std::string> evals_;
  std::unordered_map<std::uint64_t, std::vector<std::pair<std::uint32_t, std::uint32_t>>> buckets_;
};

/// Removes every problem whose normalized question shares a substring of at
/// least `window` characters with any normalized eval text. Throws
/// ArgumentError when window < 8.
DecontaminationResult decontaminate(const std::vector<VerifiableProblem>& problems,
                                    const std::vector<std::string>& eval_texts,
                                    const DecontaminationOptions& options = {});

/// {"id","reason","evidence"} per removed problem.
std::vector<json> removal_report(const DecontaminationResult& result, std::size_t window);

/// Eval texts file: JSON-lines where each line is a string or an object with
/// a "text" field (objects with "question" are also accepted).
std::vector<std::string> load_eval_texts(const std::filesystem::path& path);

}  // namespace veritrace
