#include "veritrace/sandbox.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "veritrace/errors.hpp"
#include "veritrace/random.hpp"

namespace veritrace {

json to_json(const ToyProblem& p) {
  return {{"id", p.id}, {"question", p.question}, {"ground_truth", p.ground_truth}, {"candidates", p.candidates}};
}

ToyProblem toy_problem_from_json(const json& j) {
  ToyProblem p;
  p.id = j.at("id").get<std::string>();
  p.question = j.at("question").get<std::string>();
  p.ground_truth = j.at("ground_truth").get<std::string>();
  p.candidates = j.at("candidates").get<std::vector<std::string>>();
  return p;
}

std::vector<ToyProblem> load_toy_bank(const std::filesystem::path& path) {
  std::vector<ToyProblem> bank;
  for (const auto& line : read_jsonl(path)) {
    if (!line.error.empty()) throw IoError(path.string() + ":" + std::to_string(line.line_no) + ": " + line.error);
    try {
      bank.push_back(toy_problem_from_json(line.value));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line.line_no) + ": " + e.what());
    }
  }
  validate_toy_bank(bank);
  return bank;
}

void write_toy_bank(const std::filesystem::path& path, const std::vector<ToyProblem>& bank) {
  std::vector<json> rows;
  for (const auto& p : bank) rows.push_back(to_json(p));
  atomic_write(path, to_jsonl(rows));
}

std::vector<ToyProblem> make_toy_bank(std::size_t problems, std::size_t candidates, std::uint64_t seed) {
  static constexpr std::array<const char*, 8> kWords = {"amber",  "cobalt", "indigo", "saffron",
                                                        "viridian", "ochre", "cerise", "slate"};
  if (candidates < 2 || candidates > kWords.size()) throw ArgumentError("toy bank supports 2..8 candidates");
  Rng rng(seed);
  std::vector<ToyProblem> bank;
  for (std::size_t i = 0; i < problems; ++i) {
    ToyProblem p;
    const std::string n = std::to_string(i + 1);
    p.id = "toy-" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
    p.question = "Which pigment code identifies sample " + n + "?";
    const std::size_t correct = rng.uniform_index(candidates);
    for (std::size_t k = 0; k < candidates; ++k) p.candidates.push_back(std::string(kWords[k]) + " " + n);
    p.ground_truth = p.candidates[correct];
    bank.push_back(std::move(p));
  }
  return bank;
}

void validate_toy_bank(const std::vector<ToyProblem>& bank) {
  if (bank.empty()) throw ArgumentError("toy bank is empty");
  std::set<std::string> ids;
  const std::size_t k = bank.front().candidates.size();
  for (const auto& p : bank) {
    if (p.candidates.size() < 2) throw ArgumentError("problem " + p.id + " has fewer than 2 candidates");
    if (p.candidates.size() != k) throw ArgumentError("problem " + p.id + " has a different candidate count");
    if (!ids.insert(p.id).second) throw ArgumentError("duplicate toy problem id " + p.id);
  }
}

json SandboxMetrics::to_json() const {
  return {{"iter", iter},
          {"mean_rule_reward", mean_rule_reward},
          {"mean_kl", mean_kl},
          {"clip_fraction", clip_fraction},
          {"mean_total", mean_total},
          {"expected_rule_reward", expected_rule_reward},
          {"skipped", skipped}};
}

double expected_rule_reward(const ToyPolicy& policy, const std::vector<std::vector<double>>& rewards) {
  double total = 0.0;
  for (std::size_t p = 0; p < policy.problems(); ++p) {
    const auto probs = policy.probabilities(p);
    for (std::size_t a = 0; a < probs.size(); ++a) total += probs[a] * rewards[p][a];
  }
  return total / static_cast<double>(policy.problems());
}

namespace {

std::size_t sample_index(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

struct CandidateOutcome {
  StructuredOutput output;
  std::optional<bool> verdict;
  bool error = false;
  double rule = 0.0;
};

}  // namespace

SandboxResult run_stage2_sandbox(const std::vector<ToyProblem>& bank, const SandboxOptions& options,
                                 VerifierFn verifier) {
  validate_toy_bank(bank);
  options.ppo.validate();
  if (options.iterations < 0) throw ArgumentError("iterations must be non-negative");
  const std::size_t P = bank.size();
  const std::size_t K = bank.front().candidates.size();

  // Every (problem, candidate) pair is rendered and verified once.
  std::vector<std::vector<CandidateOutcome>> outcomes(P);
  std::vector<std::vector<double>> rule_table(P, std::vector<double>(K, 0.0));
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t a = 0; a < K; ++a) {
      CandidateOutcome o;
      o.output = parse_structure(render_structured("Considering: " + bank[p].question, bank[p].candidates[a]));
      if (o.output.structured()) {
        const Verdict v = verifier(*o.output.answer, bank[p].ground_truth);
        if (v.is_error()) {
          o.error = true;
        } else {
          o.verdict = v.value;
        }
      }
      if (!o.error) o.rule = rule_reward(o.output, o.verdict);
      rule_table[p][a] = o.rule;
      outcomes[p].push_back(std::move(o));
    }
  }

  SandboxResult result{{}, ToyPolicy(P, K), ToyPolicy(P, K), 0.0, 0.0};
  ToyPolicy& policy = result.final_policy;
  const ToyPolicy& ref = result.initial;
  const PpoConfig& cfg = options.ppo;
  Rng rng(cfg.seed);

  for (int it = 0; it < options.iterations; ++it) {
    SandboxMetrics m;
    m.iter = it;
    m.expected_rule_reward = expected_rule_reward(policy, rule_table);
    std::vector<PpoSample> batch;
    batch.reserve(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t p = (static_cast<std::size_t>(it) * cfg.batch_size + b) % P;
      const auto probs = policy.probabilities(p);
      const std::size_t a = sample_index(probs, rng);
      const auto& o = outcomes[p][a];
      if (o.error) {
        ++m.skipped;
        continue;
      }
      const auto ref_probs = ref.probabilities(p);
      const RewardBreakdown exact = total_reward(o.rule, probs, ref_probs, cfg.beta);
      m.mean_rule_reward += o.rule;
      m.mean_kl += exact.kl_term;
      m.mean_total += exact.total;

      PpoSample s;
      s.problem = p;
      s.action = a;
      s.old_log_prob = policy.log_prob(p, a);
      // Single-step episode: the return is the immediate shaped reward, and
      // the sampled log-ratio is the per-sample estimate of the KL penalty.
      s.reward = o.rule - cfg.beta * (s.old_log_prob - ref.log_prob(p, a));
      batch.push_back(s);
    }
    if (!batch.empty()) {
      const double n = static_cast<double>(batch.size());
      m.mean_rule_reward /= n;
      m.mean_kl /= n;
      m.mean_total /= n;
      m.clip_fraction = ppo_step(policy, batch, cfg).clip_fraction;
    }
    result.curve.push_back(m);
    if (options.on_iteration) options.on_iteration(m);
  }

  result.final_expected_rule_reward = expected_rule_reward(policy, rule_table);
  for (std::size_t p = 0; p < P; ++p)
    result.max_total_variation =
        std::max(result.max_total_variation, total_variation(policy.probabilities(p), ref.probabilities(p)));
  return result;
}

}  // namespace veritrace
