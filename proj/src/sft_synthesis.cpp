#include "veritrace/sft_synthesis.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <unordered_map>

#include "veritrace/errors.hpp"
#include "veritrace/parallel.hpp"
#include "veritrace/random.hpp"
#include "veritrace/rl_reward.hpp"
#include "veritrace/text.hpp"

namespace veritrace {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Searched: return "searched";
    case Provenance::UnconvertedMcq: return "unconverted_mcq";
    case Provenance::GeneralDomain: return "general_domain";
  }
  return "searched";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "searched") return Provenance::Searched;
  if (s == "unconverted_mcq") return Provenance::UnconvertedMcq;
  if (s == "general_domain") return Provenance::GeneralDomain;
  throw ArgumentError("unknown provenance \"" + std::string(s) + "\"");
}

std::optional<std::string> validate(const SftRecord& r) {
  if (r.problem_id.empty()) return "problem_id is empty";
  if (text::trim(r.question).empty()) return "question is empty";
  if (text::trim(r.response).empty()) return "response is empty";
  const bool no_cot = r.complex_cot.empty();
  if (no_cot != (r.provenance == Provenance::UnconvertedMcq))
    return "complex_cot must be empty exactly for unconverted_mcq records";
  return std::nullopt;
}

json to_json(const SftRecord& r) {
  return {{"problem_id", r.problem_id},
          {"question", r.question},
          {"complex_cot", r.complex_cot},
          {"response", r.response},
          {"provenance", to_string(r.provenance)}};
}

SftRecord sft_from_json(const json& j) {
  SftRecord r;
  r.problem_id = j.at("problem_id").get<std::string>();
  r.question = j.at("question").get<std::string>();
  r.complex_cot = j.value("complex_cot", std::string());
  r.response = j.at("response").get<std::string>();
  r.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  return r;
}

std::string render_training_text(const SftRecord& r) {
  if (r.complex_cot.empty()) return r.response;
  return render_structured(r.complex_cot, r.response);
}

std::optional<std::string> find_structured_marker(std::string_view text) {
  static const std::array<std::string_view, 8> kMarkers = {
      "Inner Thinking", "Final Conclusion", "\"action\"", "\"CoT\"", "\"content\"",
      "NaturalReasoning", kThinkingDelimiter, kResponseDelimiter};
  for (auto m : kMarkers) {
    if (text.find(m) != std::string_view::npos) return std::string(m);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

StepOutcome merge_cot(const VerifiableProblem& problem, const SearchTrace& trace, ChatBackend& gen,
                      const PromptLibrary& prompts, const SynthesisConfig& cfg) {
  const auto path = trace.winning_path();
  const std::string prompt = prompts.render(
      PromptId::MergeCot, {{"Thought_Process", serialize_reasoning(path)}, {"Question", problem.question}});
  StepOutcome out;
  for (int attempt = 1; attempt <= std::max(1, cfg.merge_attempts); ++attempt) {
    out.attempts = attempt;
    auto req = ChatRequest::user(prompt, "merge", cfg.temperature);
    req.max_output_tokens = cfg.max_output_tokens;
    const ChatReply reply = gen.complete(req);
    if (!reply.ok()) {
      out.failure = "generator call failed: " + reply.error;
      return out;
    }
    try {
      const json value = extract_json(reply.content).value;
      const auto field = value.is_object() ? value.find("NaturalReasoning") : value.end();
      if (!value.is_object() || field == value.end() || !field->is_string()) {
        out.failure = "reply lacks a NaturalReasoning string";
        continue;
      }
      std::string merged(text::trim(field->get<std::string>()));
      if (merged.empty()) {
        out.failure = "NaturalReasoning is empty";
        continue;
      }
      if (auto marker = find_structured_marker(merged)) {
        out.failure = "merged reasoning still contains \"" + *marker + "\"";
        continue;
      }
      out.text = std::move(merged);
      out.failure.clear();
      return out;
    } catch (const ExtractionError&) {
      out.failure = "no JSON object in merge reply";
    }
  }
  return out;
}

StepOutcome generate_response(std::string_view question, std::string_view complex_cot, ChatBackend& gen,
                              const PromptLibrary& prompts, const SynthesisConfig& cfg) {
  if (text::trim(complex_cot).empty()) throw ArgumentError("generate_response needs a non-empty chain of thought");
  const std::string prompt = prompts.render(
      PromptId::FinalResponse, {{"Complex_CoT", std::string(complex_cot)}, {"Question", std::string(question)}});
  StepOutcome out;
  for (int attempt = 1; attempt <= std::max(1, cfg.response_attempts); ++attempt) {
    out.attempts = attempt;
    auto req = ChatRequest::user(prompt, "response", cfg.temperature);
    req.max_output_tokens = cfg.max_output_tokens;
    const ChatReply reply = gen.complete(req);
    if (!reply.ok()) {
      out.failure = "generator call failed: " + reply.error;
      return out;
    }
    if (text::trim(reply.content).empty()) {
      out.failure = "empty response";
      continue;
    }
    out.text = reply.content;
    out.failure.clear();
    return out;
  }
  return out;
}

json SynthesisReport::to_json() const {
  json d = json::array();
  for (const auto& x : drops) d.push_back({{"problem_id", x.problem_id}, {"stage", x.stage}, {"reason", x.reason}});
  return {{"traces", traces}, {"successful_traces", successful_traces}, {"records", records}, {"drops", d}};
}

SynthesisResult synthesize(const std::vector<VerifiableProblem>& problems, const std::vector<SearchTrace>& traces,
                           ChatBackend& gen, const VerifierFn& verifier, const PromptLibrary& prompts,
                           const SynthesisConfig& cfg) {
  std::unordered_map<std::string, const VerifiableProblem*> by_id;
  for (const auto& p : problems) by_id.emplace(p.id, &p);

  std::vector<const SearchTrace*> work;
  SynthesisResult result;
  result.report.traces = traces.size();
  for (const auto& t : traces) {
    if (!t.succeeded()) continue;
    ++result.report.successful_traces;
    work.push_back(&t);
  }

  struct Slot {
    std::optional<SftRecord> record;
    std::optional<SynthesisDrop> drop;
  };
  std::vector<Slot> slots(work.size());
  parallel_for(work.size(), cfg.concurrency, [&](std::size_t i) {
    const SearchTrace& trace = *work[i];
    Slot& slot = slots[i];
    const auto it = by_id.find(trace.problem_id);
    if (it == by_id.end()) {
      slot.drop = SynthesisDrop{trace.problem_id, "unknown_problem", "no problem with this id"};
      return;
    }
    const VerifiableProblem& problem = *it->second;
    const StepOutcome merged = merge_cot(problem, trace, gen, prompts, cfg);
    if (!merged.text) {
      slot.drop = SynthesisDrop{problem.id, "merge", merged.failure};
      return;
    }
    const StepOutcome response = generate_response(problem.question, *merged.text, gen, prompts, cfg);
    if (!response.text) {
      slot.drop = SynthesisDrop{problem.id, "response", response.failure};
      return;
    }
    const Verdict v = verifier(*response.text, problem.ground_truth);
    if (v.is_error() || !v.value) {
      slot.drop = SynthesisDrop{problem.id, "consistency",
                                v.is_error() ? "verifier error: " + *v.error : "response contradicts the ground truth"};
      return;
    }
    slot.record = SftRecord{problem.id, problem.question, *merged.text, *response.text, Provenance::Searched};
  });

  for (auto& s : slots) {
    if (s.record) result.records.push_back(std::move(*s.record));
    if (s.drop) result.report.drops.push_back(std::move(*s.drop));
  }
  result.report.records = result.records.size();
  return result;
}

// ---------------------------------------------------------------------------

json Recipe::to_json() const {
  return {{"searched", searched}, {"unconverted_mcq", unconverted_mcq}, {"general_domain", general_domain}};
}

SftRecord mcq_to_record(const McqRecord& mcq) {
  SftRecord r;
  r.problem_id = mcq.id;
  r.question = mcq.question + "\n" + render_options(mcq);
  r.response = mcq.answer_text();
  r.provenance = Provenance::UnconvertedMcq;
  return r;
}

namespace {

template <class T>
std::vector<T> sample_source(const std::vector<T>& source, std::size_t n, std::uint64_t seed, const char* name) {
  if (n > source.size()) {
    throw ArgumentError(std::string("source ") + name + " has " + std::to_string(source.size()) +
                        " records but the recipe asks for " + std::to_string(n));
  }
  std::vector<std::size_t> idx(source.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, name));
  rng.shuffle(idx.begin(), idx.end());
  std::vector<T> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(source[idx[i]]);
  return out;
}

}  // namespace

std::vector<SftRecord> assemble_dataset(const std::vector<SftRecord>& searched,
                                        const std::vector<McqRecord>& unconverted_mcqs,
                                        const std::vector<SftRecord>& general, const Recipe& recipe,
                                        std::uint64_t seed) {
  std::vector<SftRecord> out;
  for (auto& r : sample_source(searched, recipe.searched, seed, "searched")) {
    r.provenance = Provenance::Searched;
    out.push_back(std::move(r));
  }
  for (const auto& m : sample_source(unconverted_mcqs, recipe.unconverted_mcq, seed, "unconverted_mcq"))
    out.push_back(mcq_to_record(m));
  for (auto& r : sample_source(general, recipe.general_domain, seed, "general_domain")) {
    r.provenance = Provenance::GeneralDomain;
    out.push_back(std::move(r));
  }
  std::set<std::string> ids;
  for (const auto& r : out) {
    if (auto err = validate(r)) throw ArgumentError("record " + r.problem_id + ": " + *err);
    if (!ids.insert(r.problem_id).second) throw ArgumentError("problem id " + r.problem_id + " sampled twice");
  }
  Rng rng(derive_seed(seed, "dataset-order"));
  rng.shuffle(out.begin(), out.end());
  return out;
}

std::size_t whitespace_token_count(std::string_view text) { return text::split_whitespace(text).size(); }

json DatasetStats::to_json() const {
  return {{"record_count", record_count},
          {"mean_cot_tokens", mean_cot_tokens},
          {"mean_response_tokens", mean_response_tokens},
          {"provenance_counts", provenance_counts},
          {"token_counter", token_counter}};
}

DatasetStats compute_stats(const std::vector<SftRecord>& records, const TokenCounter& counter,
                           std::string counter_name) {
  DatasetStats s;
  s.token_counter = std::move(counter_name);
  s.record_count = records.size();
  for (auto p : {Provenance::Searched, Provenance::UnconvertedMcq, Provenance::GeneralDomain})
    s.provenance_counts[std::string(to_string(p))] = 0;
  std::size_t with_cot = 0;
  double cot_tokens = 0.0;
  double response_tokens = 0.0;
  for (const auto& r : records) {
    ++s.provenance_counts[std::string(to_string(r.provenance))];
    if (!r.complex_cot.empty()) {
      ++with_cot;
      cot_tokens += static_cast<double>(counter(r.complex_cot));
    }
    response_tokens += static_cast<double>(counter(r.response));
  }
  if (with_cot > 0) s.mean_cot_tokens = cot_tokens / static_cast<double>(with_cot);
  if (!records.empty()) s.mean_response_tokens = response_tokens / static_cast<double>(records.size());
  return s;
}

DatasetStats emit(const std::vector<SftRecord>& records, const std::filesystem::path& path,
                  const TokenCounter& counter, std::string counter_name) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  atomic_write(path, to_jsonl(rows));
  return compute_stats(records, counter, std::move(counter_name));
}

std::vector<SftRecord> ingest_sft(const std::filesystem::path& path) {
  std::vector<SftRecord> out;
  for (const auto& line : read_jsonl(path)) {
    const std::string where = path.string() + ":" + std::to_string(line.line_no) + ": ";
    if (!line.error.empty()) throw IoError(where + line.error);
    SftRecord r;
    try {
      r = sft_from_json(line.value);
    } catch (const json::exception& e) {
      throw IoError(where + e.what());
    } catch (const ArgumentError& e) {
      throw IoError(where + e.what());
    }
    if (auto err = validate(r)) throw IoError(where + *err);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace veritrace
