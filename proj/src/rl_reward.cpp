#include "veritrace/rl_reward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "veritrace/errors.hpp"
#include "veritrace/text.hpp"

namespace veritrace {

StructuredOutput parse_structure(std::string raw) {
  StructuredOutput out;
  out.raw = std::move(raw);
  const std::string& s = out.raw;
  const auto t = s.find(kThinkingDelimiter);
  if (t == std::string::npos) return out;
  const auto think_begin = t + kThinkingDelimiter.size();
  const auto r = s.find(kResponseDelimiter, think_begin);
  if (r == std::string::npos) return out;
  std::string answer(text::trim(std::string_view(s).substr(r + kResponseDelimiter.size())));
  if (answer.empty()) return out;
  out.think = std::string(text::trim(std::string_view(s).substr(think_begin, r - think_begin)));
  out.answer = std::move(answer);
  return out;
}

std::string render_structured(std::string_view think, std::string_view answer) {
  std::string out;
  out.append(kThinkingDelimiter).append("\n").append(think).append("\n\n");
  out.append(kResponseDelimiter).append("\n").append(answer);
  return out;
}

double rule_reward(const StructuredOutput& sample, std::optional<bool> verdict) {
  if (!sample.structured()) {
    if (verdict) throw ArgumentError("verdict supplied for a null-structured sample");
    return kRewardUnstructured;
  }
  if (!verdict) throw ArgumentError("structured sample needs a verifier verdict");
  return *verdict ? kRewardCorrect : kRewardIncorrect;
}

namespace {

void check_distribution(std::span<const double> d, const char* name) {
  double sum = 0.0;
  for (double v : d) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw ArgumentError(std::string(name) + " has an entry outside [0, 1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ArgumentError(std::string(name) + " does not sum to 1");
}

}  // namespace

double categorical_kl(std::span<const double> p, std::span<const double> q) {
  if (p.empty() || p.size() != q.size()) throw ArgumentError("distributions have different supports");
  check_distribution(p, "p");
  check_distribution(q, "q");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    const double pi = std::max(p[i], kProbabilityFloor);
    const double qi = std::max(q[i], kProbabilityFloor);
    kl += p[i] * (std::log(pi) - std::log(qi));
  }
  return std::max(kl, 0.0);
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ArgumentError("distributions have different supports");
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

RewardBreakdown total_reward(double r_rule, std::span<const double> policy_dist, std::span<const double> ref_dist,
                             double beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ArgumentError("beta must be a finite non-negative number");
  RewardBreakdown b;
  b.r_rule = r_rule;
  b.beta = beta;
  b.kl_term = categorical_kl(policy_dist, ref_dist);
  b.total = r_rule - beta * b.kl_term;
  return b;
}

// ---------------------------------------------------------------------------

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

ToyPolicy::ToyPolicy(std::size_t problems, std::size_t candidates)
    : problems_(problems), candidates_(candidates), logits_(problems * candidates, 0.0), values_(problems, 0.0) {
  if (problems == 0 || candidates < 2) throw ArgumentError("toy policy needs >= 1 problem and >= 2 candidates");
}

std::span<double> ToyPolicy::logits(std::size_t problem) {
  if (problem >= problems_) throw ArgumentError("problem index out of range");
  return {logits_.data() + problem * candidates_, candidates_};
}

std::span<const double> ToyPolicy::logits(std::size_t problem) const {
  if (problem >= problems_) throw ArgumentError("problem index out of range");
  return {logits_.data() + problem * candidates_, candidates_};
}

std::vector<double> ToyPolicy::probabilities(std::size_t problem) const { return softmax(logits(problem)); }

double ToyPolicy::log_prob(std::size_t problem, std::size_t action) const {
  const auto l = logits(problem);
  if (action >= l.size()) throw ArgumentError("action index out of range");
  const double m = *std::max_element(l.begin(), l.end());
  double z = 0.0;
  for (double v : l) z += std::exp(v - m);
  return l[action] - m - std::log(z);
}

json ToyPolicy::to_json() const {
  json rows = json::array();
  for (std::size_t p = 0; p < problems_; ++p) {
    const auto l = logits(p);
    rows.push_back(std::vector<double>(l.begin(), l.end()));
  }
  return {{"problems", problems_}, {"candidates", candidates_}, {"logits", rows}, {"values", values_}};
}

// ---------------------------------------------------------------------------

PpoConfig PpoConfig::large_scale_preset() {
  PpoConfig c;
  c.clip_range = 0.2;
  c.beta = 0.03;
  c.ppo_epochs = 3;
  c.discount = 1.0;
  c.value_coef = 1.0;
  c.batch_size = 128;
  return c;
}

void PpoConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("learning_rate must be positive");
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ArgumentError("beta must be non-negative");
  if (ppo_epochs < 1) throw ArgumentError("ppo_epochs must be >= 1");
  if (!(discount > 0.0 && discount <= 1.0)) throw ArgumentError("discount must be in (0, 1]");
  if (!(value_coef >= 0.0) || !std::isfinite(value_coef)) throw ArgumentError("value_coef must be non-negative");
  if (!(clip_range > 0.0 && clip_range < 1.0)) throw ArgumentError("clip_range must be in (0, 1)");
}

json PpoConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size},     {"beta", beta},
          {"ppo_epochs", ppo_epochs},       {"discount", discount},         {"value_coef", value_coef},
          {"clip_range", clip_range},       {"normalize_advantages", normalize_advantages}, {"seed", seed}};
}

std::vector<double> compute_advantages(const ToyPolicy& policy, std::span<const PpoSample> batch, bool normalize) {
  std::vector<double> adv;
  adv.reserve(batch.size());
  for (const auto& s : batch) adv.push_back(s.reward - policy.value(s.problem));
  if (normalize && adv.size() > 1) {
    double mean = 0.0;
    for (double a : adv) mean += a;
    mean /= static_cast<double>(adv.size());
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    var /= static_cast<double>(adv.size());
    const double sd = std::sqrt(var);
    for (double& a : adv) a = (a - mean) / (sd + 1e-8);
  }
  return adv;
}

SurrogateEval evaluate_surrogate(const ToyPolicy& policy, std::span<const PpoSample> batch,
                                 std::span<const double> advantages, double clip_range, double value_coef) {
  if (batch.empty()) throw ArgumentError("empty PPO batch");
  if (advantages.size() != batch.size()) throw ArgumentError("one advantage per sample required");
  const std::size_t k = policy.candidates();
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  SurrogateEval ev;
  ev.logit_grad.assign(policy.problems() * k, 0.0);
  ev.value_grad.assign(policy.problems(), 0.0);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    const double a = advantages[b];
    const double rho = std::exp(policy.log_prob(s.problem, s.action) - s.old_log_prob);
    const double rho_clipped = std::clamp(rho, 1.0 - clip_range, 1.0 + clip_range);
    const double unclipped = rho * a;
    const double clipped = rho_clipped * a;
    ev.policy_term += std::min(unclipped, clipped) * inv_b;
    if (unclipped <= clipped) {
      // d(rho A)/d logit_j = rho A (1[j == a] - pi_j)
      const auto probs = policy.probabilities(s.problem);
      for (std::size_t j = 0; j < k; ++j) {
        const double indicator = j == s.action ? 1.0 : 0.0;
        ev.logit_grad[s.problem * k + j] += unclipped * (indicator - probs[j]) * inv_b;
      }
    } else {
      ++ev.clipped;
    }
    const double err = s.reward - policy.value(s.problem);
    ev.value_term += err * err * inv_b;
    ev.value_grad[s.problem] += value_coef * 2.0 * err * inv_b;
  }
  ev.objective = ev.policy_term - value_coef * ev.value_term;
  return ev;
}

PpoMetrics ppo_step(ToyPolicy& policy, std::span<const PpoSample> batch, const PpoConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw ArgumentError("empty PPO batch");
  for (const auto& s : batch) {
    if (s.problem >= policy.problems() || s.action >= policy.candidates())
      throw ArgumentError("PPO sample refers to a problem or action outside the policy");
    if (!std::isfinite(s.reward) || !std::isfinite(s.old_log_prob))
      throw NumericError("non-finite reward or log-probability in PPO batch");
  }

  PpoMetrics m;
  for (const auto& s : batch) m.mean_reward += s.reward;
  m.mean_reward /= static_cast<double>(batch.size());

  std::set<std::size_t> touched;
  for (const auto& s : batch) touched.insert(s.problem);
  std::vector<std::vector<double>> before;
  for (std::size_t p : touched) before.push_back(policy.probabilities(p));

  const auto advantages = compute_advantages(policy, batch, cfg.normalize_advantages);
  std::size_t clipped = 0;
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    const auto ev = evaluate_surrogate(policy, batch, advantages, cfg.clip_range, cfg.value_coef);
    for (double g : ev.logit_grad)
      if (!std::isfinite(g)) throw NumericError("non-finite policy gradient at PPO epoch " + std::to_string(epoch));
    for (double g : ev.value_grad)
      if (!std::isfinite(g)) throw NumericError("non-finite value gradient at PPO epoch " + std::to_string(epoch));
    auto& logits = policy.all_logits();
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += cfg.learning_rate * ev.logit_grad[i];
    auto& values = policy.all_values();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += cfg.learning_rate * ev.value_grad[i];
    clipped += ev.clipped;
    m.objective = ev.objective;
  }
  m.clip_fraction =
      static_cast<double>(clipped) / static_cast<double>(batch.size() * static_cast<std::size_t>(cfg.ppo_epochs));

  std::size_t i = 0;
  for (std::size_t p : touched) m.kl_new_old += categorical_kl(policy.probabilities(p), before[i++]);
  m.kl_new_old /= static_cast<double>(touched.size());
  return m;
}

}  // namespace veritrace
