#include "veritrace/trajectory_search.hpp"

#include <atomic>
#include <mutex>

#include "veritrace/errors.hpp"
#include "veritrace/parallel.hpp"
#include "veritrace/text.hpp"

namespace veritrace {

std::string_view to_string(CotAction a) {
  switch (a) {
    case CotAction::InnerThinking: return "Inner Thinking";
    case CotAction::FinalConclusion: return "Final Conclusion";
    case CotAction::Verification: return "Verification";
  }
  return "";
}

std::string_view to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::Init: return "init";
    case StrategyKind::ExploreNewPath: return "explore_new_path";
    case StrategyKind::Backtracking: return "backtracking";
    case StrategyKind::Verification: return "verification";
    case StrategyKind::Correction: return "correction";
  }
  return "";
}

StrategyKind strategy_from_string(std::string_view s) {
  for (auto k : {StrategyKind::Init, StrategyKind::ExploreNewPath, StrategyKind::Backtracking,
                 StrategyKind::Verification, StrategyKind::Correction}) {
    if (to_string(k) == s) return k;
  }
  throw ArgumentError("unknown strategy \"" + std::string(s) + "\"");
}

std::span<const TrajectoryNode> SearchTrace::winning_path() const {
  if (!success) throw ArgumentError("trace for " + problem_id + " has no successful attempt");
  const auto& nodes = attempts.at(success->attempt).nodes;
  return std::span<const TrajectoryNode>(nodes).first(success->node + 1);
}

void SearchLimits::validate() const {
  if (max_depth < 1) throw ArgumentError("max depth N must be >= 1");
  if (max_attempts < 1) throw ArgumentError("max attempts T must be >= 1");
}

std::vector<CotStep> parse_cot(const json& value) {
  if (!value.is_object()) throw ArgumentError("CoT reply is not a JSON object");
  auto it = value.find("CoT");
  if (it == value.end() || !it->is_array()) throw ArgumentError("reply lacks a \"CoT\" array");
  std::vector<CotStep> steps;
  bool has_conclusion = false;
  for (const auto& item : *it) {
    if (!item.is_object()) throw ArgumentError("CoT step is not an object");
    const auto action = item.find("action");
    const auto content = item.find("content");
    if (action == item.end() || !action->is_string()) throw ArgumentError("CoT step lacks \"action\"");
    if (content == item.end() || !content->is_string()) throw ArgumentError("CoT step lacks \"content\"");
    CotStep step;
    step.content = content->get<std::string>();
    const std::string a = action->get<std::string>();
    if (a == "Inner Thinking") {
      step.action = CotAction::InnerThinking;
      const auto title = item.find("title");
      if (title == item.end() || !title->is_string() || text::trim(title->get<std::string>()).empty()) {
        throw ArgumentError("Inner Thinking step lacks a title");
      }
      step.title = title->get<std::string>();
    } else if (a == "Final Conclusion") {
      step.action = CotAction::FinalConclusion;
      has_conclusion = true;
    } else if (a == "Verification") {
      step.action = CotAction::Verification;
    } else {
      throw ArgumentError("unknown CoT action \"" + a + "\"");
    }
    steps.push_back(std::move(step));
  }
  if (!has_conclusion) throw ArgumentError("CoT has no Final Conclusion step");
  return steps;
}

namespace {

std::string answer_of(const std::vector<CotStep>& steps) {
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    if (it->action == CotAction::FinalConclusion) return std::string(text::trim(it->content));
  }
  return {};
}

PromptId prompt_for(StrategyKind k) {
  switch (k) {
    case StrategyKind::ExploreNewPath: return PromptId::StrategyExploreNewPath;
    case StrategyKind::Backtracking: return PromptId::StrategyBacktracking;
    case StrategyKind::Verification: return PromptId::StrategyVerification;
    case StrategyKind::Correction: return PromptId::StrategyCorrection;
    case StrategyKind::Init: break;
  }
  return PromptId::InitCot;
}

NodeResult generate_node(const std::string& prompt, const std::string& tag, ChatBackend& gen,
                         const GenerationOptions& options) {
  NodeResult r;
  for (int attempt = 0; attempt <= options.format_retries; ++attempt) {
    auto req = ChatRequest::user(prompt, tag, options.temperature);
    req.max_output_tokens = options.max_output_tokens;
    const ChatReply reply = gen.complete(req);
    if (!reply.ok()) {
      r.failure = "generator call failed: " + reply.error;
      return r;  // hard failure: no re-prompt
    }
    try {
      TrajectoryNode node;
      node.steps = parse_cot(extract_json(reply.content).value);
      node.answer = answer_of(node.steps);
      if (node.answer.empty()) throw ArgumentError("Final Conclusion is empty");
      r.node = std::move(node);
      r.failure.clear();
      return r;
    } catch (const ExtractionError&) {
      r.failure = "no JSON object in generator reply";
    } catch (const ArgumentError& e) {
      r.failure = e.what();
    }
  }
  return r;
}

}  // namespace

std::string serialize_reasoning(std::span<const TrajectoryNode> nodes) {
  std::string out;
  for (const auto& node : nodes) {
    if (!out.empty()) out += "\n";
    out += "Iteration " + std::to_string(node.iteration) + ":\n";
    for (const auto& step : node.steps) {
      out += "[" + std::string(to_string(step.action)) + "]";
      if (!step.title.empty()) out += " " + step.title;
      out += "\n" + step.content + "\n";
    }
  }
  return out;
}

NodeResult init_cot(const VerifiableProblem& problem, ChatBackend& gen, const PromptLibrary& prompts,
                    const GenerationOptions& options) {
  const std::string prompt = prompts.render(PromptId::InitCot, {{"Question", problem.question}});
  NodeResult r = generate_node(prompt, "search:init", gen, options);
  if (r.node) {
    r.node->iteration = 0;
    r.node->strategy = StrategyKind::Init;
  }
  return r;
}

StrategyKind sample_strategy(int iteration, Rng& rng) {
  if (iteration < 1) throw ArgumentError("strategies are sampled from iteration 1 on");
  if (iteration == 2) {
    static constexpr StrategyKind kWithBacktrack[] = {StrategyKind::ExploreNewPath, StrategyKind::Backtracking,
                                                      StrategyKind::Verification, StrategyKind::Correction};
    return kWithBacktrack[rng.uniform_index(4)];
  }
  static constexpr StrategyKind kBase[] = {StrategyKind::ExploreNewPath, StrategyKind::Verification,
                                           StrategyKind::Correction};
  return kBase[rng.uniform_index(3)];
}

NodeResult refine(const VerifiableProblem& problem, std::span<const TrajectoryNode> history, StrategyKind strategy,
                  std::optional<int> backtrack_target, ChatBackend& gen, const PromptLibrary& prompts,
                  const GenerationOptions& options) {
  if (history.empty()) throw ArgumentError("refine needs a non-empty history");
  if (strategy == StrategyKind::Init) throw ArgumentError("Init is not a refinement strategy");
  const int iteration = static_cast<int>(history.size());
  std::span<const TrajectoryNode> shown = history;
  if (strategy == StrategyKind::Backtracking) {
    if (!backtrack_target || *backtrack_target < 0 || *backtrack_target >= iteration - 1) {
      throw ArgumentError("Backtracking target must satisfy 0 <= j < i-1");
    }
    shown = history.first(static_cast<std::size_t>(*backtrack_target) + 1);
  } else if (backtrack_target) {
    throw ArgumentError("only Backtracking takes a target");
  }
  const std::string prompt = prompts.render(prompt_for(strategy), {{"Question", problem.question},
                                                                   {"Previous_CoT", serialize_reasoning(shown)}});
  NodeResult r = generate_node(prompt, "search:" + std::string(to_string(strategy)), gen, options);
  if (r.node) {
    r.node->iteration = iteration;
    r.node->strategy = strategy;
    r.node->backtrack_target = backtrack_target;
  }
  return r;
}

namespace {

// Verifies in place; returns true on acceptance. Verifier errors count as false.
bool verify_node(TrajectoryNode& node, const VerifiableProblem& problem, const VerifierFn& verifier) {
  const Verdict v = verifier(node.answer, problem.ground_truth);
  if (v.is_error()) {
    node.verdict = false;
    node.verifier_error = *v.error;
    return false;
  }
  node.verdict = v.value;
  return v.value;
}

}  // namespace

SearchTrace search(const VerifiableProblem& problem, ChatBackend& gen, const VerifierFn& verifier,
                   const SearchLimits& limits, std::uint64_t seed, const PromptLibrary& prompts,
                   const GenerationOptions& options) {
  limits.validate();
  SearchTrace trace;
  trace.problem_id = problem.id;
  trace.rng_seed = seed;
  Rng rng(seed);
  for (int t = 0; t < limits.max_attempts; ++t) {
    SearchAttempt& attempt = trace.attempts.emplace_back();
    NodeResult init = init_cot(problem, gen, prompts, options);
    if (!init.node) {
      attempt.abort_reason = "init: " + init.failure;
      continue;
    }
    attempt.nodes.push_back(std::move(*init.node));
    if (verify_node(attempt.nodes.back(), problem, verifier)) {
      trace.success = SearchSuccess{static_cast<std::size_t>(t), 0};
      return trace;
    }
    for (int i = 1; i <= limits.max_depth; ++i) {
      const StrategyKind kind = sample_strategy(i, rng);
      std::optional<int> target;
      if (kind == StrategyKind::Backtracking) target = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(i - 1)));
      NodeResult next = refine(problem, attempt.nodes, kind, target, gen, prompts, options);
      if (!next.node) {
        attempt.abort_reason = std::string(to_string(kind)) + ": " + next.failure;
        break;
      }
      attempt.nodes.push_back(std::move(*next.node));
      if (verify_node(attempt.nodes.back(), problem, verifier)) {
        trace.success = SearchSuccess{static_cast<std::size_t>(t), attempt.nodes.size() - 1};
        return trace;
      }
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json step_to_json(const CotStep& s) {
  json j{{"action", to_string(s.action)}, {"content", s.content}};
  if (s.action == CotAction::InnerThinking) j["title"] = s.title;
  return j;
}

json node_to_json(const TrajectoryNode& n) {
  json steps = json::array();
  for (const auto& s : n.steps) steps.push_back(step_to_json(s));
  json j{{"iteration", n.iteration},
         {"strategy", to_string(n.strategy)},
         {"steps", steps},
         {"answer", n.answer},
         {"verdict", n.verdict ? json(*n.verdict) : json(nullptr)}};
  if (n.backtrack_target) j["backtrack_target"] = *n.backtrack_target;
  if (n.verifier_error) j["verifier_error"] = *n.verifier_error;
  return j;
}

TrajectoryNode node_from_json(const json& j) {
  TrajectoryNode n;
  n.iteration = j.at("iteration").get<int>();
  n.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  n.steps = parse_cot(json{{"CoT", j.at("steps")}});
  n.answer = j.at("answer").get<std::string>();
  if (!j.at("verdict").is_null()) n.verdict = j.at("verdict").get<bool>();
  if (j.contains("backtrack_target")) n.backtrack_target = j.at("backtrack_target").get<int>();
  if (j.contains("verifier_error")) n.verifier_error = j.at("verifier_error").get<std::string>();
  return n;
}

}  // namespace

json to_json(const SearchTrace& trace) {
  json attempts = json::array();
  for (const auto& a : trace.attempts) {
    json nodes = json::array();
    for (const auto& n : a.nodes) nodes.push_back(node_to_json(n));
    attempts.push_back({{"nodes", nodes}, {"abort_reason", a.abort_reason ? json(*a.abort_reason) : json(nullptr)}});
  }
  json outcome = trace.success ? json{{"status", "success"}, {"attempt", trace.success->attempt},
                                      {"node", trace.success->node}}
                               : json{{"status", "discarded"}};
  return json{{"problem_id", trace.problem_id}, {"rng_seed", trace.rng_seed}, {"outcome", outcome},
              {"attempts", attempts}};
}

SearchTrace trace_from_json(const json& j) {
  SearchTrace t;
  t.problem_id = j.at("problem_id").get<std::string>();
  t.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  for (const auto& a : j.at("attempts")) {
    SearchAttempt attempt;
    for (const auto& n : a.at("nodes")) attempt.nodes.push_back(node_from_json(n));
    if (!a.at("abort_reason").is_null()) attempt.abort_reason = a.at("abort_reason").get<std::string>();
    t.attempts.push_back(std::move(attempt));
  }
  const auto& outcome = j.at("outcome");
  if (outcome.at("status").get<std::string>() == "success") {
    t.success = SearchSuccess{outcome.at("attempt").get<std::size_t>(), outcome.at("node").get<std::size_t>()};
  }
  return t;
}

std::optional<std::string> check_trace(const SearchTrace& trace, const SearchLimits& limits) {
  if (trace.attempts.empty()) return "trace has no attempts";
  if (trace.attempts.size() > static_cast<std::size_t>(limits.max_attempts)) return "more than T attempts";
  for (std::size_t a = 0; a < trace.attempts.size(); ++a) {
    const auto& nodes = trace.attempts[a].nodes;
    if (nodes.size() > static_cast<std::size_t>(limits.max_depth) + 1) return "attempt has more than N+1 nodes";
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      if (n.iteration != static_cast<int>(i)) return "node iteration out of sequence";
      if ((i == 0) != (n.strategy == StrategyKind::Init)) return "Init strategy must be exactly iteration 0";
      if (n.strategy == StrategyKind::Backtracking) {
        if (!n.backtrack_target || *n.backtrack_target >= n.iteration - 1) return "invalid backtrack target";
      }
      if (!n.verdict) return "node left unverified";
      const bool is_success = trace.success && trace.success->attempt == a && trace.success->node == i;
      if (*n.verdict != is_success) return "verdict inconsistent with outcome";
    }
    const bool last = a + 1 == trace.attempts.size();
    if (!last && trace.success && trace.success->attempt == a) return "attempts recorded after success";
  }
  if (trace.success) {
    if (trace.success->attempt + 1 != trace.attempts.size()) return "success is not in the final attempt";
    if (trace.success->node + 1 != trace.attempts.back().nodes.size()) return "success node is not terminal";
  } else if (trace.attempts.size() != static_cast<std::size_t>(limits.max_attempts)) {
    return "discarded trace did not use all T attempts";
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// TraceStore and the batch driver

TraceStore::TraceStore(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

std::filesystem::path TraceStore::path_for(const std::string& problem_id) const {
  return dir_ / (encode_file_stem(problem_id) + ".json");
}

bool TraceStore::contains(const std::string& problem_id) const { return std::filesystem::exists(path_for(problem_id)); }

SearchTrace TraceStore::load(const std::string& problem_id) const {
  const auto path = path_for(problem_id);
  try {
    return trace_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw IoError("corrupt trace " + path.string() + ": " + e.what());
  }
}

void TraceStore::save(const SearchTrace& trace) const {
  atomic_write(path_for(trace.problem_id), to_json(trace).dump(2, ' ', false, json::error_handler_t::replace) + "\n");
}

json Stage1Summary::to_json() const {
  json errs = json::array();
  for (const auto& [id, msg] : errors) errs.push_back({{"problem_id", id}, {"error", msg}});
  return json{{"total", total},
              {"completed", completed},
              {"resumed", resumed},
              {"succeeded", succeeded},
              {"discarded", discarded},
              {"not_started", not_started},
              {"aborted_attempts", aborted_attempts},
              {"success_rate", success_rate()},
              {"strategy_histogram", strategy_histogram},
              {"errors", errs}};
}

std::vector<const SearchTrace*> Stage1Result::successes() const {
  std::vector<const SearchTrace*> out;
  for (const auto& t : traces) {
    if (t.succeeded()) out.push_back(&t);
  }
  return out;
}

Stage1Result run_stage1(const std::vector<VerifiableProblem>& problems, ChatBackend& gen, const VerifierFn& verifier,
                        const Stage1Options& options, const PromptLibrary& prompts, const TraceStore* store) {
  options.limits.validate();
  struct Slot {
    std::optional<SearchTrace> trace;
    bool resumed = false;
    std::optional<std::string> error;
  };
  std::vector<Slot> slots(problems.size());
  std::mutex stop_mutex;
  std::atomic<bool> stopped{false};

  parallel_for(problems.size(), options.concurrency, [&](std::size_t i) {
    const VerifiableProblem& p = problems[i];
    Slot& slot = slots[i];
    try {
      if (store && store->contains(p.id)) {
        slot.trace = store->load(p.id);
        slot.resumed = true;
        return;
      }
      if (options.should_stop) {
        std::lock_guard lock(stop_mutex);
        if (stopped || options.should_stop()) {
          stopped = true;
          return;
        }
      }
      SearchTrace t = search(p, gen, verifier, options.limits, derive_seed(options.seed, p.id), prompts,
                             options.generation);
      if (store) store->save(t);
      slot.trace = std::move(t);
    } catch (const std::exception& e) {
      slot.error = e.what();
    }
  });

  Stage1Result result;
  Stage1Summary& s = result.summary;
  s.total = problems.size();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    Slot& slot = slots[i];
    if (slot.error) {
      s.errors.emplace_back(problems[i].id, *slot.error);
      continue;
    }
    if (!slot.trace) {
      ++s.not_started;
      continue;
    }
    ++s.completed;
    if (slot.resumed) ++s.resumed;
    if (slot.trace->succeeded()) ++s.succeeded;
    else ++s.discarded;
    for (const auto& a : slot.trace->attempts) {
      if (a.abort_reason) ++s.aborted_attempts;
      for (const auto& n : a.nodes) ++s.strategy_histogram[std::string(to_string(n.strategy))];
    }
    result.traces.push_back(std::move(*slot.trace));
  }
  return result;
}

}  // namespace veritrace
