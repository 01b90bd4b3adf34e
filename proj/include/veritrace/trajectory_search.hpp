#pragma once

// Stage one: search for a verified reasoning trajectory. Each attempt starts
// from an initial chain of thought and applies up to N randomly sampled
// refinement strategies until the verifier accepts; a problem gets at most T
// attempts before it is discarded.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "veritrace/llm_gateway.hpp"
#include "veritrace/problem_bank.hpp"
#include "veritrace/prompts.hpp"
#include "veritrace/random.hpp"
#include "veritrace/verifier.hpp"

namespace veritrace {

enum class CotAction { InnerThinking, FinalConclusion, Verification };

std::string_view to_string(CotAction a);

struct CotStep {
  CotAction action = CotAction::InnerThinking;
  std::string title;  // non-empty for InnerThinking, empty otherwise
  std::string content;

  bool operator==(const CotStep&) const = default;
};

enum class StrategyKind { Init, ExploreNewPath, Backtracking, Verification, Correction };

std::string_view to_string(StrategyKind k);
StrategyKind strategy_from_string(std::string_view s);

struct TrajectoryNode {
  int iteration = 0;
  StrategyKind strategy = StrategyKind::Init;
  std::optional<int> backtrack_target;  // only for Backtracking, < iteration - 1
  std::vector<CotStep> steps;
  std::string answer;  // content of the last FinalConclusion step
  std::optional<bool> verdict;
  std::optional<std::string> verifier_error;  // verdict recorded as false

  bool operator==(const TrajectoryNode&) const = default;
};

struct SearchAttempt {
  std::vector<TrajectoryNode> nodes;
  std::optional<std::string> abort_reason;

  bool operator==(const SearchAttempt&) const = default;
};

struct SearchSuccess {
  std::size_t attempt = 0;
  std::size_t node = 0;

  bool operator==(const SearchSuccess&) const = default;
};

struct SearchTrace {
  std::string problem_id;
  std::vector<SearchAttempt> attempts;
  std::optional<SearchSuccess> success;  // nullopt means discarded
  std::uint64_t rng_seed = 0;

  bool succeeded() const { return success.has_value(); }
  /// Nodes [0..success.node] of the winning attempt. Throws when discarded.
  std::span<const TrajectoryNode> winning_path() const;

  bool operator==(const SearchTrace&) const = default;
};

struct SearchLimits {
  int max_depth = 3;     // N: refinements per attempt
  int max_attempts = 3;  // T

  void validate() const;
};

struct GenerationOptions {
  double temperature = kGenerativeTemperature;
  int max_output_tokens = 4096;
  int format_retries = 2;  // re-prompts after an unparseable reply
};

/// Parses {"CoT": [{"action", "title"?, "content"}, ...]}. Throws
/// ArgumentError on schema violations or when no Final Conclusion exists.
std::vector<CotStep> parse_cot(const json& value);

/// Numbered iterations, each listing its steps verbatim. Used for the
/// Previous_CoT and Thought_Process prompt slots.
std::string serialize_reasoning(std::span<const TrajectoryNode> nodes);

struct NodeResult {
  std::optional<TrajectoryNode> node;
  std::string failure;
};

NodeResult init_cot(const VerifiableProblem& problem, ChatBackend& gen, const PromptLibrary& prompts,
                    const GenerationOptions& options = {});

/// Uniform over {ExploreNewPath, Verification, Correction}, plus
/// Backtracking at iteration 2 only. Throws ArgumentError for iteration < 1.
StrategyKind sample_strategy(int iteration, Rng& rng);

/// Produces node `history.size()`. For Backtracking, `backtrack_target` must
/// be < history.size() - 1 and the prompt shows nodes 0..target only.
NodeResult refine(const VerifiableProblem& problem, std::span<const TrajectoryNode> history, StrategyKind strategy,
                  std::optional<int> backtrack_target, ChatBackend& gen, const PromptLibrary& prompts,
                  const GenerationOptions& options = {});

/// One problem's full search. `seed` drives strategy and backtrack draws.
SearchTrace search(const VerifiableProblem& problem, ChatBackend& gen, const VerifierFn& verifier,
                   const SearchLimits& limits, std::uint64_t seed, const PromptLibrary& prompts,
                   const GenerationOptions& options = {});

json to_json(const SearchTrace& trace);
SearchTrace trace_from_json(const json& j);

/// Returns the first violated SearchTrace invariant, if any.
std::optional<std::string> check_trace(const SearchTrace& trace, const SearchLimits& limits);

/// One JSON file per problem id.
class TraceStore {
 public:
  explicit TraceStore(std::filesystem::path dir);

  bool contains(const std::string& problem_id) const;
  SearchTrace load(const std::string& problem_id) const;
  /// Atomic: a crash never leaves a partial trace behind.
  void save(const SearchTrace& trace) const;
  std::filesystem::path path_for(const std::string& problem_id) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

struct Stage1Options {
  SearchLimits limits;
  std::uint64_t seed = 0;
  std::size_t concurrency = 4;
  GenerationOptions generation;
  /// Checked before each problem starts; returning true stops the batch
  /// early (used to simulate interruption).
  std::function<bool()> should_stop;
};

struct Stage1Summary {
  std::size_t total = 0;
  std::size_t completed = 0;  // traces available (fresh or resumed)
  std::size_t resumed = 0;
  std::size_t succeeded = 0;
  std::size_t discarded = 0;
  std::size_t not_started = 0;
  std::size_t aborted_attempts = 0;
  std::map<std::string, std::size_t> strategy_histogram;  // over every recorded node
  std::vector<std::pair<std::string, std::string>> errors;  // (problem id, message)

  double success_rate() const {
    return completed == 0 ? 0.0 : static_cast<double>(succeeded) / static_cast<double>(completed);
  }
  json to_json() const;
};

struct Stage1Result {
  std::vector<SearchTrace> traces;  // completed traces, input order
  Stage1Summary summary;

  std::vector<const SearchTrace*> successes() const;
};

/// Runs `search` over every problem in bounded parallel. With a store,
/// problems that already have a trace are loaded instead of searched, and
/// fresh traces are saved as soon as they finish.
Stage1Result run_stage1(const std::vector<VerifiableProblem>& problems, ChatBackend& gen, const VerifierFn& verifier,
                        const Stage1Options& options, const PromptLibrary& prompts,
                        const TraceStore* store = nullptr);

}  // namespace veritrace
