#pragma once

// Desk-scale stage two: a contextual bandit where each problem's action is
// one of K candidate answers. Sampled answers are rendered in the
// think-then-answer layout, verified, rewarded and fed to ppo_step.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "veritrace/io.hpp"
#include "veritrace/rl_reward.hpp"
#include "veritrace/verifier.hpp"

namespace veritrace {

struct ToyProblem {
  std::string id;
  std::string question;
  std::string ground_truth;
  std::vector<std::string> candidates;

  bool operator==(const ToyProblem&) const = default;
};

json to_json(const ToyProblem& p);
ToyProblem toy_problem_from_json(const json& j);
std::vector<ToyProblem> load_toy_bank(const std::filesystem::path& path);
void write_toy_bank(const std::filesystem::path& path, const std::vector<ToyProblem>& bank);

/// Synthetic bank with exactly one candidate per problem that matches the
/// ground truth under the exact verifier; the correct slot is seeded.
std::vector<ToyProblem> make_toy_bank(std::size_t problems, std::size_t candidates, std::uint64_t seed);

/// Throws ArgumentError unless every problem has >= 2 candidates, all banks
/// share one K, and ids are unique.
void validate_toy_bank(const std::vector<ToyProblem>& bank);

struct SandboxMetrics {
  int iter = 0;
  double mean_rule_reward = 0.0;  // over the sampled batch
  double mean_kl = 0.0;           // exact KL(pi || ref) averaged over the batch
  double clip_fraction = 0.0;
  double mean_total = 0.0;        // r_rule - beta * exact KL, batch mean
  double expected_rule_reward = 0.0;  // policy expectation over the whole bank
  std::size_t skipped = 0;        // samples dropped for verifier errors

  json to_json() const;
};

struct SandboxOptions {
  PpoConfig ppo;
  int iterations = 200;
  /// Called after every iteration (used to stream metrics.jsonl).
  std::function<void(const SandboxMetrics&)> on_iteration;
};

struct SandboxResult {
  std::vector<SandboxMetrics> curve;
  ToyPolicy initial;
  ToyPolicy final_policy;
  double final_expected_rule_reward = 0.0;
  double max_total_variation = 0.0;  // max over problems, final vs initial
};

/// Uniform initial policy, frozen as the KL reference. The verifier defaults
/// to exact match; its verdicts are memoized per (problem, candidate).
/// Each update uses batch_size samples drawn round-robin over the bank.
SandboxResult run_stage2_sandbox(const std::vector<ToyProblem>& bank, const SandboxOptions& options,
                                 VerifierFn verifier = make_exact_verifier());

/// Mean over problems of sum_a pi(a) * rule_reward(candidate a).
double expected_rule_reward(const ToyPolicy& policy, const std::vector<std::vector<double>>& rewards);

}  // namespace veritrace
