#include "veritrace/verifier.hpp"

#include "veritrace/errors.hpp"
#include "veritrace/parallel.hpp"
#include "veritrace/text.hpp"

namespace veritrace {

std::string_view to_string(VerifyMethod m) {
  return m == VerifyMethod::LlmJudge ? "llm_judge" : "exact_match";
}

Verdict verify_exact(std::string_view response, std::string_view truth) {
  Verdict v;
  v.method = VerifyMethod::ExactMatch;
  const std::string r = text::normalize_for_match(response);
  const std::string t = text::normalize_for_match(truth);
  v.value = !t.empty() && r.find(t) != std::string::npos;
  return v;
}

std::optional<bool> map_judge_reply(std::string_view reply) {
  const std::string lower = text::to_lower(reply);
  const bool has_true = lower.find("true") != std::string::npos;
  const bool has_false = lower.find("false") != std::string::npos;
  if (has_true == has_false) return std::nullopt;
  return has_true;
}

Verdict verify_llm(std::string_view response, std::string_view truth, ChatBackend& judge,
                   const PromptLibrary& prompts) {
  const std::string prompt = prompts.render(
      PromptId::Verifier, {{"Model Response", std::string(response)}, {"Ground-true Answer", std::string(truth)}});
  Verdict v;
  v.method = VerifyMethod::LlmJudge;
  v.raw = std::string();
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto req = ChatRequest::user(prompt, "verifier", kJudgeTemperature);
    req.max_output_tokens = 16;
    const ChatReply reply = judge.complete(req);
    if (!reply.ok()) {
      v.error = "judge call failed: " + reply.error;
      return v;
    }
    v.raw = reply.content;
    if (auto mapped = map_judge_reply(reply.content)) {
      v.value = *mapped;
      return v;
    }
  }
  v.error = "judge reply is neither True nor False: " + text::truncate(*v.raw, 120);
  return v;
}

VerifierFn make_exact_verifier() {
  return [](std::string_view response, std::string_view truth) { return verify_exact(response, truth); };
}

VerifierFn make_llm_verifier(ChatBackend& judge, const PromptLibrary& prompts) {
  return [&judge, &prompts](std::string_view response, std::string_view truth) {
    return verify_llm(response, truth, judge, prompts);
  };
}

json to_json(const AnnotatedSample& s) {
  return json{{"problem_id", s.problem_id},
              {"model_answer", s.model_answer},
              {"ground_truth", s.ground_truth},
              {"human_label", s.human_label}};
}

AnnotatedSample annotated_from_json(const json& j) {
  AnnotatedSample s;
  s.problem_id = j.at("problem_id").get<std::string>();
  s.model_answer = j.at("model_answer").get<std::string>();
  s.ground_truth = j.at("ground_truth").get<std::string>();
  s.human_label = j.at("human_label").get<bool>();
  if (s.problem_id.empty() || s.model_answer.empty() || s.ground_truth.empty()) {
    throw ArgumentError("annotated sample has an empty field");
  }
  return s;
}

std::vector<AnnotatedSample> load_annotated(const std::filesystem::path& path) {
  std::vector<AnnotatedSample> out;
  for (const auto& line : read_jsonl(path)) {
    const std::string where = path.string() + ":" + std::to_string(line.line_no);
    if (!line.error.empty()) throw IoError(where + ": " + line.error);
    try {
      out.push_back(annotated_from_json(line.value));
    } catch (const std::exception& e) {
      throw IoError(where + ": " + e.what());
    }
  }
  return out;
}

json VerifierEvaluation::to_json() const {
  json errs = json::array();
  json per = json::array();
  for (const auto& s : samples) {
    json row{{"problem_id", s.problem_id}, {"human_label", s.human_label}, {"predicted", s.predicted}};
    if (s.error) {
      row["error"] = s.error_message;
      errs.push_back({{"problem_id", s.problem_id}, {"error", s.error_message}});
    }
    per.push_back(std::move(row));
  }
  return json{{"method", to_string(method)},
              {"total", total},
              {"accuracy", accuracy},
              {"confusion", {{"tp", tp}, {"fp", fp}, {"tn", tn}, {"fn", fn}}},
              {"error_count", errors},
              {"errors", errs},
              {"samples", per}};
}

VerifierEvaluation evaluate_verifier(const std::vector<AnnotatedSample>& samples, VerifyMethod method,
                                     const VerifierFn& verify, std::size_t concurrency) {
  if (samples.empty()) throw ArgumentError("evaluate_verifier needs at least one sample");
  VerifierEvaluation ev;
  ev.method = method;
  ev.total = samples.size();
  ev.samples.resize(samples.size());
  parallel_for(samples.size(), concurrency, [&](std::size_t i) {
    const auto& s = samples[i];
    const Verdict v = verify(s.model_answer, s.ground_truth);
    SampleOutcome& o = ev.samples[i];
    o.problem_id = s.problem_id;
    o.human_label = s.human_label;
    if (v.is_error()) {
      o.error = true;
      o.error_message = *v.error;
      o.predicted = !s.human_label;
    } else {
      o.predicted = v.value;
    }
  });
  for (const auto& o : ev.samples) {
    if (o.error) ++ev.errors;
    if (o.predicted && o.human_label) ++ev.tp;
    else if (o.predicted && !o.human_label) ++ev.fp;
    else if (!o.predicted && !o.human_label) ++ev.tn;
    else ++ev.fn;
  }
  ev.accuracy = static_cast<double>(ev.tp + ev.tn) / static_cast<double>(ev.total);
  return ev;
}

}  // namespace veritrace
