// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 1 for ctest).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "testkit.hpp"
#include "veritrace/errors.hpp"
#include "veritrace/llm_gateway.hpp"
#include "veritrace/pipeline.hpp"
#include "veritrace/problem_bank.hpp"
#include "veritrace/random.hpp"
#include "veritrace/rl_reward.hpp"
#include "veritrace/sandbox.hpp"
#include "veritrace/sft_synthesis.hpp"
#include "veritrace/trajectory_search.hpp"
#include "veritrace/verifier.hpp"

using namespace veritrace;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// 1 -------------------------------------------------------------------------
Outcome reward_table() {
  Outcome o;
  const auto structured = parse_structure("## Thinking\nhmm\n## Final Response\nAspirin");
  const auto unstructured = parse_structure("Aspirin");
  o.require(rule_reward(structured, true) == 1.0, "structured+True != 1");
  o.require(rule_reward(structured, false) == 0.1, "structured+False != 0.1");
  o.require(rule_reward(unstructured, std::nullopt) == 0.0, "null-structured != 0");

  static const std::vector<std::string> words = {"renal", "acute", "dose", "patient", "sodium", "wait", "so",
                                                 "therefore", "lesion", "aorta", "mg", "hmm"};
  Rng rng(20240601);
  auto phrase = [&](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + words[rng.uniform_index(words.size())];
    return s;
  };
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t shape = rng.uniform_index(6);
    std::string raw;
    bool is_structured = false;
    switch (shape) {
      case 0: raw = phrase(3 + rng.uniform_index(20)); break;
      case 1: raw = "## Thinking\n" + phrase(8); break;
      case 2: raw = "## Final Response\n" + phrase(4); break;
      case 3: raw = "## Final Response\n" + phrase(4) + "\n## Thinking\n" + phrase(6); break;
      case 4: raw = "## Thinking\n" + phrase(6) + "\n## Final Response\n   \n"; break;
      default:
        raw = phrase(rng.uniform_index(3)) + "## Thinking\n" + phrase(10) + "\n## Final Response\n" + phrase(1 + rng.uniform_index(5));
        is_structured = true;
    }
    const auto parsed = parse_structure(raw);
    o.require(parsed.structured() == is_structured, "structure misclassified: " + raw);
    if (is_structured) {
      const bool verdict = rng.uniform_index(2) == 1;
      o.require(rule_reward(parsed, verdict) == (verdict ? 1.0 : 0.1), "wrong reward for structured text");
    } else {
      o.require(rule_reward(parsed, std::nullopt) == 0.0, "wrong reward for unstructured text");
      bool threw = false;
      try {
        rule_reward(parsed, true);
      } catch (const ArgumentError&) {
        threw = true;
      }
      o.require(threw, "verdict accepted for a null-structured sample");
    }
    ++checked;
  }
  if (o.pass) o.detail = "3 table cases + " + std::to_string(checked) + " randomized texts exact";
  return o;
}

// 2 -------------------------------------------------------------------------
Outcome algorithm_conformance() {
  Outcome o;
  const auto prompts = PromptLibrary::defaults();
  const auto prob = testkit::problem("alg-1", "Which structure is affected in this vignette?", "Zeta ligament");
  SearchLimits limits;  // N = 3, T = 3

  ScriptedBackend never({ScriptEntry::always(".*", testkit::cot_reply("Alpha ligament"))});
  const auto discarded = search(prob, never, make_exact_verifier(), limits, 5, prompts);
  o.require(!discarded.succeeded(), "never-verifying script succeeded");
  o.require(discarded.attempts.size() == 3, "discarded trace has " + std::to_string(discarded.attempts.size()) + " attempts");
  for (const auto& a : discarded.attempts) {
    o.require(a.nodes.size() <= 4, "attempt with more than 4 nodes");
    o.require(a.nodes.size() == 4, "never-verifying attempt stopped before N refinements");
  }

  for (int k = 0; k <= 3; ++k) {
    std::vector<std::string> replies(static_cast<std::size_t>(k), testkit::cot_reply("Alpha ligament"));
    replies.push_back(testkit::cot_reply("Zeta ligament"));
    ScriptedBackend gen({ScriptEntry::sequence("search:.*", replies)});
    int calls = 0;
    VerifierFn counting = [&](std::string_view r, std::string_view t) {
      ++calls;
      return verify_exact(r, t);
    };
    const auto trace = search(prob, gen, counting, limits, 9, prompts);
    o.require(trace.succeeded(), "verify-at-" + std::to_string(k) + " did not succeed");
    if (!trace.succeeded()) break;
    const auto& final_attempt = trace.attempts[trace.success->attempt];
    std::size_t verified = 0;
    for (const auto& n : final_attempt.nodes) verified += n.verdict.has_value();
    o.require(verified == static_cast<std::size_t>(k + 1) && calls == k + 1,
              "verify-at-" + std::to_string(k) + " made " + std::to_string(calls) + " verifier calls");
  }
  if (o.pass) o.detail = "discarded after 3x4 nodes; verify-at-k used k+1 verifier calls for k=0..3";
  return o;
}

// 3 -------------------------------------------------------------------------
Outcome backtracking_constraint() {
  Outcome o;
  const int draws = 10000;
  std::map<int, int> hits;
  for (int i = 1; i <= 3; ++i) {
    Rng rng(1000 + i);
    for (int d = 0; d < draws; ++d) hits[i] += sample_strategy(i, rng) == StrategyKind::Backtracking;
  }
  const double f2 = hits[2] / static_cast<double>(draws);
  o.require(hits[1] == 0, "backtracking drawn at iteration 1");
  o.require(hits[3] == 0, "backtracking drawn at iteration 3");
  o.require(std::abs(f2 - 0.25) <= 0.02, fmt("iteration-2 frequency %.4f", f2));
  o.detail = fmt("freq i=1 %.0f, i=2 %.4f, i=3 %.0f over 10000 draws", hits[1], f2, hits[3]);
  return o;
}

// 4 -------------------------------------------------------------------------
Outcome decontamination_oracle() {
  Outcome o;
  static const std::vector<std::string> words = {"the", "patient", "renal", "artery", "with", "acute", "pain",
                                                 "of", "left", "lower", "quadrant", "fever", "chronic", "dose",
                                                 "mg", "daily", "which", "best", "next", "step", "in", "management"};
  Rng rng(777);
  auto text = [&](std::size_t min_chars) {
    std::string s;
    while (s.size() < min_chars) s += (s.empty() ? "" : " ") + words[rng.uniform_index(words.size())];
    return s;
  };
  auto vary = [&](std::string s) {  // case and whitespace noise the normalizer must undo
    std::string out;
    for (char c : s) {
      if (c == ' ' && rng.uniform_index(4) == 0) {
        out += rng.uniform_index(2) ? "  " : "\n\t";
      } else {
        out += (rng.uniform_index(3) == 0) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c;
      }
    }
    return out;
  };
  int planted = 0, near = 0, agree = 0, removed = 0;
  for (int i = 0; i < 500; ++i) {
    std::string q = text(120 + rng.uniform_index(200));
    std::string e = text(120 + rng.uniform_index(200));
    const std::size_t kind = rng.uniform_index(3);
    if (kind < 2) {
      const std::size_t len = kind == 0 ? 64 + rng.uniform_index(30) : 40 + rng.uniform_index(24);
      const std::size_t from = rng.uniform_index(q.size() - len);
      const std::string piece = q.substr(from, len);
      const std::size_t at = rng.uniform_index(e.size());
      e = e.substr(0, at) + " " + vary(piece) + " " + e.substr(at);
      (kind == 0 ? planted : near)++;
    }
    const auto p = testkit::problem("d" + std::to_string(i), q, "x");
    const auto expected = testkit::naive_contaminated({p}, {e}, 64);
    const auto got = decontaminate({p}, {e}, {});
    const bool prod = !got.removed.empty();
    const bool oracle = !expected.empty();
    removed += prod;
    if (prod == oracle) {
      ++agree;
    } else {
      o.require(false, "pair " + std::to_string(i) + ": filter " + (prod ? "removed" : "kept") + ", oracle disagrees");
    }
  }
  o.detail = std::to_string(agree) + "/500 pairs agree (" + std::to_string(planted) + " planted >=64, " +
             std::to_string(near) + " near-miss plants, " + std::to_string(removed) + " removed)";
  return o;
}

// 5 -------------------------------------------------------------------------
Outcome kl_ppo_numerics() {
  Outcome o;
  const std::vector<double> p = {1.0, 0.0}, q = {0.5, 0.5};
  const auto b = total_reward(1.0, p, q, 0.03);
  o.require(std::abs(b.kl_term - std::log(2.0)) <= 1e-9, fmt("kl %.12f != ln 2", b.kl_term));
  o.require(std::abs(b.total - (1.0 - 0.03 * std::log(2.0))) <= 1e-9, fmt("total %.12f", b.total));
  o.require(std::abs(b.total - 0.97921) <= 1e-5, fmt("total %.6f != 0.97921", b.total));

  ToyPolicy policy(2, 3);
  policy.all_logits() = {0.3, -0.2, 0.5, 1.1, 0.0, -0.7};
  policy.all_values() = {0.2, -0.1};
  const std::vector<double> ratio = {1.05, 0.9, 1.4, 0.6, 1.0, 1.15};
  const std::vector<std::pair<std::size_t, std::size_t>> sa = {{0, 0}, {0, 2}, {1, 1}, {1, 0}, {0, 1}, {1, 2}};
  std::vector<PpoSample> batch;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    PpoSample s{sa[i].first, sa[i].second, policy.log_prob(sa[i].first, sa[i].second) - std::log(ratio[i]),
                i % 2 ? 0.1 : 1.0};
    batch.push_back(s);
  }
  const std::vector<double> adv = {0.8, -0.5, 1.2, -1.0, 0.3, 0.4};
  const auto ev = evaluate_surrogate(policy, batch, adv, 0.2, 1.0);
  const auto fd = testkit::fd_logit_grad(policy, batch, adv, 0.2, 1.0);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) max_diff = std::max(max_diff, std::abs(fd[i] - ev.logit_grad[i]));
  o.require(max_diff < 1e-5, fmt("finite-difference gap %.3e", max_diff));

  ToyPolicy single(1, 3);
  single.all_logits() = {0.4, -0.3, 0.1};
  const std::vector<PpoSample> clipped = {{0, 0, single.log_prob(0, 0) - std::log(1.5), 1.0}};
  const std::vector<double> pos = {1.0};
  const auto cev = evaluate_surrogate(single, clipped, pos, 0.2, 0.0);
  bool zero = true;
  for (double g : cev.logit_grad) zero = zero && g == 0.0;
  o.require(zero && cev.clipped == 1, "clipped branch leaked gradient");
  o.require(std::abs(cev.policy_term - 1.2) < 1e-12, fmt("clipped objective %.12f != 1.2", cev.policy_term));

  if (o.pass) o.detail = fmt("kl-ln2 gap %.1e, FD gap %.2e, clipped gradient exactly 0", std::abs(b.kl_term - std::log(2.0)), max_diff);
  return o;
}

// 6 -------------------------------------------------------------------------
Outcome sandbox_dynamics() {
  Outcome o;
  const auto bank = load_toy_bank(testkit::data_path("toy_bank.jsonl"));
  o.require(bank.size() == 50 && bank.front().candidates.size() == 4, "toy bank is not 50 x 4");
  for (const auto& p : bank) {
    int correct = 0;
    for (const auto& c : p.candidates) correct += verify_exact(c, p.ground_truth).value;
    o.require(correct == 1, "problem " + p.id + " has " + std::to_string(correct) + " verified candidates");
  }
  SandboxOptions opt;
  opt.ppo = PpoConfig::large_scale_preset();
  opt.iterations = 200;
  const auto learn = run_stage2_sandbox(bank, opt);
  o.require(learn.final_expected_rule_reward >= 0.9,
            fmt("expected rule reward %.4f after 200 updates", learn.final_expected_rule_reward));
  opt.ppo.beta = 1e3;
  const auto pinned = run_stage2_sandbox(bank, opt);
  o.require(pinned.max_total_variation <= 0.05, fmt("beta=1e3 total variation %.4f", pinned.max_total_variation));
  o.detail = fmt("reward %.4f after 200 updates (lr %.2f); beta=1e3 max TV %.4f", learn.final_expected_rule_reward,
                 opt.ppo.learning_rate, pinned.max_total_variation);
  return o;
}

// 7 -------------------------------------------------------------------------
Outcome verifier_harness() {
  Outcome o;
  const auto samples = load_annotated(testkit::data_path("verifier/annotated_40.jsonl"));
  o.require(samples.size() == 40, "fixture does not hold 40 samples");
  const auto prompts = PromptLibrary::defaults();
  ScriptedBackend judge(load_script(testkit::data_path("verifier/judge.jsonl")));
  const auto llm = evaluate_verifier(samples, VerifyMethod::LlmJudge, make_llm_verifier(judge, prompts));
  const auto exact = evaluate_verifier(samples, VerifyMethod::ExactMatch, make_exact_verifier());

  // Hand count: v01-v25 literal answers, v26-v35 aliases, v36-v40 wrong.
  // The judge misses one alias ("Whooping cough."); exact match misses all
  // ten aliases and accepts "Pseudogout." for "Gout".
  o.require(llm.tp == 34 && llm.fn == 1 && llm.tn == 5 && llm.fp == 0 && llm.errors == 0, "judge confusion != 34/1/5/0");
  o.require(exact.tp == 25 && exact.fn == 10 && exact.tn == 4 && exact.fp == 1, "exact confusion != 25/10/4/1");
  o.require(llm.accuracy == 39.0 / 40.0, fmt("judge accuracy %.6f != 39/40", llm.accuracy));
  o.require(exact.accuracy == 29.0 / 40.0, fmt("exact accuracy %.6f != 29/40", exact.accuracy));
  o.require(exact.accuracy < llm.accuracy, "exact match is not below the judge");
  o.detail = fmt("judge %.4f (39/40) > exact match %.4f (29/40)", llm.accuracy, exact.accuracy);
  return o;
}

// 8 -------------------------------------------------------------------------
Outcome end_to_end() {
  Outcome o;
  std::vector<std::string> outputs;
  std::vector<SftRecord> records;
  json report;
  for (int run = 0; run < 2; ++run) {
    const auto dir = testkit::temp_dir("accept-e2e");
    const auto cfg = testkit::e2e_config(dir);
    for (const char* cmd : {"curate", "search", "synthesize"}) {
      const auto res = run_command(cmd, cfg, {});
      o.require(res.exit_code == kExitOk, std::string(cmd) + " exited " + std::to_string(res.exit_code));
    }
    outputs.push_back(testkit::slurp(dir / "sft.jsonl"));
    if (run == 0) {
      records = ingest_sft(dir / "sft.jsonl");
      report = json::parse(testkit::slurp(dir / "synthesis_report.json"));
    }
  }
  o.require(!outputs[0].empty() && outputs[0] == outputs[1], "sft.jsonl differs between runs");

  std::size_t searched = 0;
  ScriptedBackend judge(load_script(testkit::data_path("e2e/verifier.jsonl")));
  const auto prompts = PromptLibrary::defaults();
  const std::map<std::string, std::string> truth = {{"e2e-01", "Hexokinase"}, {"e2e-02", "Metformin"}};
  for (const auto& r : records) {
    o.require(!find_structured_marker(r.complex_cot).has_value(), "marker left in " + r.problem_id);
    if (r.provenance != Provenance::Searched) continue;
    ++searched;
    const auto it = truth.find(r.problem_id);
    o.require(it != truth.end(), "unexpected searched record " + r.problem_id);
    if (it == truth.end()) continue;
    const auto v = verify_llm(r.response, it->second, judge, prompts);
    o.require(!v.is_error() && v.value, r.problem_id + " fails the consistency gate");
  }
  bool gate_dropped = false;
  for (const auto& d : report["synthesis"]["drops"]) gate_dropped |= d["stage"] == "consistency";
  o.require(searched == 2, "expected 2 searched records");
  o.require(gate_dropped, "contradicting response was not dropped");
  o.detail = std::to_string(records.size()) + " records byte-identical across runs; " + std::to_string(searched) +
             " searched records re-verified; 1 contradicting response gated out";
  return o;
}

// 9 -------------------------------------------------------------------------
Outcome dataset_recipe() {
  Outcome o;
  std::vector<SftRecord> searched, general;
  std::vector<McqRecord> mcqs;
  for (int i = 0; i < 230; ++i)
    searched.push_back({"s" + std::to_string(i), "Q" + std::to_string(i), "thinking " + std::to_string(i), "A", Provenance::Searched});
  for (int i = 0; i < 60; ++i) {
    McqRecord m;
    m.id = "m" + std::to_string(i);
    m.question = "MCQ " + std::to_string(i);
    m.options = {{"A", "yes"}, {"B", "no"}};
    m.answer_label = "A";
    mcqs.push_back(m);
  }
  for (int i = 0; i < 70; ++i)
    general.push_back({"g" + std::to_string(i), "G" + std::to_string(i), "reasoning", "answer", Provenance::GeneralDomain});
  const Recipe recipe{200, 40, 50};
  const auto out = assemble_dataset(searched, mcqs, general, recipe, 42);
  const auto stats = compute_stats(out);
  o.require(out.size() == 290, "record count " + std::to_string(out.size()));
  o.require(stats.provenance_counts.at("searched") == 200 && stats.provenance_counts.at("unconverted_mcq") == 40 &&
                stats.provenance_counts.at("general_domain") == 50,
            "provenance counts do not match the recipe");
  o.detail = "290 records: searched 200, unconverted_mcq 40, general_domain 50";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"reward table fidelity", reward_table},
      {"search loop conformance (N=3, T=3)", algorithm_conformance},
      {"backtracking only at iteration 2", backtracking_constraint},
      {"decontamination matches naive oracle (window 64)", decontamination_oracle},
      {"KL and PPO numerics", kl_ppo_numerics},
      {"sandbox learning dynamics", sandbox_dynamics},
      {"verifier harness", verifier_harness},
      {"end-to-end determinism", end_to_end},
      {"dataset recipe", dataset_recipe},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s [%zu] %s: %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
