#pragma once

// Stage two mechanics: the think-before-answering layout, the piecewise
// verifier reward, the KL-shaped total reward and a PPO update for a tabular
// categorical policy (one contextual-bandit step per problem).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "veritrace/io.hpp"

namespace veritrace {

/// Layout contract shared with the SFT records: the thinking section comes
/// first, the formal response after it.
inline constexpr std::string_view kThinkingDelimiter = "## Thinking";
inline constexpr std::string_view kResponseDelimiter = "## Final Response";

inline constexpr double kRewardCorrect = 1.0;
inline constexpr double kRewardIncorrect = 0.1;
inline constexpr double kRewardUnstructured = 0.0;

/// Floor applied to probabilities inside logarithms.
inline constexpr double kProbabilityFloor = 1e-12;

struct StructuredOutput {
  std::string raw;
  std::optional<std::string> think;
  std::optional<std::string> answer;

  bool structured() const { return answer.has_value(); }
};

/// Structured iff `raw` contains kThinkingDelimiter and, after it,
/// kResponseDelimiter followed by a non-blank answer. Sections are trimmed.
StructuredOutput parse_structure(std::string raw);

std::string render_structured(std::string_view think, std::string_view answer);

/// structured + true -> 1, structured + false -> 0.1, unstructured -> 0.
/// The verdict must be present exactly when the sample is structured;
/// anything else throws ArgumentError.
double rule_reward(const StructuredOutput& sample, std::optional<bool> verdict);

struct RewardBreakdown {
  double r_rule = 0.0;
  double kl_term = 0.0;
  double beta = 0.0;
  double total = 0.0;  // r_rule - beta * kl_term
};

/// KL(p || q) = sum p ln(p/q) with 0 ln 0 = 0 and both probabilities floored
/// at kProbabilityFloor inside the log. Throws ArgumentError when the
/// supports differ or either side does not sum to 1 within 1e-9.
double categorical_kl(std::span<const double> p, std::span<const double> q);

double total_variation(std::span<const double> p, std::span<const double> q);

RewardBreakdown total_reward(double r_rule, std::span<const double> policy_dist, std::span<const double> ref_dist,
                             double beta);

/// Per-problem logits over K candidate answers plus a scalar value estimate
/// per problem.
class ToyPolicy {
 public:
  ToyPolicy(std::size_t problems, std::size_t candidates);

  std::size_t problems() const { return problems_; }
  std::size_t candidates() const { return candidates_; }

  std::span<double> logits(std::size_t problem);
  std::span<const double> logits(std::size_t problem) const;
  double& value(std::size_t problem) { return values_.at(problem); }
  double value(std::size_t problem) const { return values_.at(problem); }

  std::vector<double> probabilities(std::size_t problem) const;
  double log_prob(std::size_t problem, std::size_t action) const;

  const std::vector<double>& all_logits() const { return logits_; }
  std::vector<double>& all_logits() { return logits_; }
  const std::vector<double>& all_values() const { return values_; }
  std::vector<double>& all_values() { return values_; }

  json to_json() const;

  bool operator==(const ToyPolicy&) const = default;

 private:
  std::size_t problems_;
  std::size_t candidates_;
  std::vector<double> logits_;
  std::vector<double> values_;
};

std::vector<double> softmax(std::span<const double> logits);

struct PpoConfig {
  double learning_rate = 0.75;
  std::size_t batch_size = 128;
  double beta = 0.03;
  int ppo_epochs = 3;
  double discount = 1.0;
  double value_coef = 1.0;
  double clip_range = 0.2;
  bool normalize_advantages = true;
  std::uint64_t seed = 0;

  /// clip 0.2, beta 0.03, 3 epochs, discount 1.0, value coef 1.0, batch 128.
  static PpoConfig large_scale_preset();

  /// Throws ArgumentError unless clip_range in (0,1), discount in (0,1],
  /// and the remaining fields are positive/non-negative as appropriate.
  void validate() const;

  json to_json() const;
};

struct PpoSample {
  std::size_t problem = 0;
  std::size_t action = 0;
  double old_log_prob = 0.0;
  double reward = 0.0;  // shaped reward; episodes are single-step
};

struct SurrogateEval {
  /// mean_b min(rho A, clip(rho) A) - value_coef * mean_b (r - V)^2
  double objective = 0.0;
  double policy_term = 0.0;
  double value_term = 0.0;
  std::vector<double> logit_grad;  // d objective / d logits, row-major
  std::vector<double> value_grad;  // d objective / d values
  std::size_t clipped = 0;         // samples whose gradient was cut by the clip
};

/// Advantages A_b = r_b - V(problem_b), optionally whitened over the batch.
std::vector<double> compute_advantages(const ToyPolicy& policy, std::span<const PpoSample> batch, bool normalize);

/// Clipped surrogate and its exact gradient at the current parameters.
/// `clip_range` may be +infinity (plain policy-gradient surrogate).
SurrogateEval evaluate_surrogate(const ToyPolicy& policy, std::span<const PpoSample> batch,
                                 std::span<const double> advantages, double clip_range, double value_coef);

struct PpoMetrics {
  double mean_reward = 0.0;
  double clip_fraction = 0.0;  // over all epochs
  double kl_new_old = 0.0;     // mean over the distinct problems in the batch
  double objective = 0.0;      // last epoch
};

/// cfg.ppo_epochs gradient-ascent passes on the surrogate. Advantages are
/// computed once before the first pass. Throws ArgumentError for an empty
/// batch and NumericError for a non-finite gradient.
PpoMetrics ppo_step(ToyPolicy& policy, std::span<const PpoSample> batch, const PpoConfig& cfg);

}  // namespace veritrace
