#include "veritrace/curation.hpp"

#include <algorithm>
#include <array>
#include <regex>
#include <set>
#include <unordered_set>

#include "veritrace/errors.hpp"
#include "veritrace/parallel.hpp"
#include "veritrace/text.hpp"

namespace veritrace {

namespace {

bool is_valid(const std::string& label, const std::vector<std::string>& valid) {
  return std::find(valid.begin(), valid.end(), label) != valid.end();
}

std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

}  // namespace

std::optional<std::string> extract_answer_letter(std::string_view reply, const std::vector<std::string>& valid_labels) {
  const std::string s(text::trim(reply));
  if (s.empty()) return std::nullopt;
  std::smatch m;

  // The whole reply is a label, possibly decorated: "B", "(B)", "B.", "**B**".
  static const std::regex bare(R"(^[\*\s]*[\(\[]?([A-H])[\)\]]?[\.:]?[\*\s]*$)");
  if (std::regex_match(s, m, bare) && is_valid(m[1], valid_labels)) return m[1].str();

  // "The answer is (B)", "Answer: B", "answer is option C".
  static const std::regex stated(
      R"([Aa]nswer\s*(?:[Ii]s|[Ww]ould [Bb]e|:|-)?\s*:?\s*(?:[Oo]ption\s*)?[\*\s]*[\(\[]?([A-H])(?![A-Za-z]))");
  if (std::regex_search(s, m, stated) && is_valid(m[1], valid_labels)) return m[1].str();

  // Leading label followed by its option text: "C) hexokinase", "(C) ...", "C. ...".
  static const std::regex leading(R"(^[\*\s]*[\(\[]?([A-H])[\)\]\.:](?:\s|$))");
  if (std::regex_search(s, m, leading) && is_valid(m[1], valid_labels)) return m[1].str();

  // "Option C" / "option (C)" anywhere.
  static const std::regex option_word(R"([Oo]ption\s*[\(\[]?([A-H])(?![A-Za-z]))");
  if (std::regex_search(s, m, option_word) && is_valid(m[1], valid_labels)) return m[1].str();

  // A single parenthesized label anywhere: "... so (D) fits best."
  static const std::regex paren(R"(\(([A-H])\))");
  std::set<std::string> found;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), paren); it != std::sregex_iterator(); ++it) {
    if (is_valid((*it)[1], valid_labels)) found.insert((*it)[1]);
  }
  if (found.size() == 1) return *found.begin();
  return std::nullopt;
}

ChallengeProbeResult probe_challenge(const McqRecord& mcq, const std::vector<NamedBackend>& probes,
                                     const PromptLibrary& prompts) {
  ChallengeProbeResult r;
  r.mcq_id = mcq.id;
  r.question_length = utf8_length(text::trim(mcq.question));
  std::vector<std::string> labels;
  for (const auto& [label, body] : mcq.options) labels.push_back(label);
  const std::string prompt =
      prompts.render(PromptId::ProbeMcq, {{"Question", mcq.question}, {"Options", render_options(mcq)}});
  bool all = !probes.empty();
  for (const auto& probe : probes) {
    auto req = ChatRequest::user(prompt, "probe:" + probe.name, kJudgeTemperature);
    req.max_output_tokens = 64;
    const ChatReply reply = probe.backend->complete(req);
    std::optional<std::string> answer;
    if (!reply.ok()) {
      r.probe_errors[probe.name] = reply.error;
    } else {
      answer = extract_answer_letter(reply.content, labels);
    }
    r.probe_answers[probe.name] = answer;
    if (!answer || *answer != mcq.answer_label) all = false;
  }
  r.all_correct = all;
  return r;
}

std::string_view to_string(FilterOutcome v) {
  switch (v) {
    case FilterOutcome::Pass: return "Pass";
    case FilterOutcome::TooSimple: return "Too Simple";
    case FilterOutcome::AmbiguousAnswer: return "Ambiguous Answer";
    case FilterOutcome::NotReformulatable: return "Not Reformulatable";
  }
  return "";
}

std::optional<FilterOutcome> match_filter_phrase(std::string_view judge_output) {
  static constexpr std::array<FilterOutcome, 4> kByLength = {
      FilterOutcome::NotReformulatable, FilterOutcome::AmbiguousAnswer, FilterOutcome::TooSimple,
      FilterOutcome::Pass};
  const std::string lower = text::to_lower(judge_output);
  for (FilterOutcome v : kByLength) {
    if (lower.find(text::to_lower(to_string(v))) != std::string::npos) return v;
  }
  return std::nullopt;
}

namespace {

std::map<std::string, std::string> mcq_prompt_values(const McqRecord& mcq) {
  return {{"Question", mcq.question},
          {"Options", render_options(mcq)},
          {"Answer", mcq.answer_label + ". " + mcq.answer_text()}};
}

}  // namespace

FilterVerdict judge_suitability(const McqRecord& mcq, ChatBackend& judge, const PromptLibrary& prompts,
                                int max_attempts) {
  FilterVerdict v;
  v.mcq_id = mcq.id;
  const std::string prompt = prompts.render(PromptId::FilterMcq, mcq_prompt_values(mcq));
  std::string last_error;
  for (int attempt = 0; attempt < std::max(1, max_attempts); ++attempt) {
    auto req = ChatRequest::user(prompt, "filter", kJudgeTemperature);
    req.max_output_tokens = 256;
    const ChatReply reply = judge.complete(req);
    if (!reply.ok()) {
      last_error = "judge call failed: " + reply.error;
      continue;
    }
    v.raw_judge_output = reply.content;
    if (auto m = match_filter_phrase(reply.content)) {
      v.verdict = *m;
      return v;
    }
    last_error = "unparseable";
  }
  v.verdict = FilterOutcome::NotReformulatable;
  v.reason = last_error;
  return v;
}

ReformatResult reformat_open_ended(const McqRecord& mcq, ChatBackend& reformatter, const PromptLibrary& prompts,
                                   int max_attempts, double temperature) {
  ReformatResult r;
  const std::string prompt = prompts.render(PromptId::ReformatMcq, mcq_prompt_values(mcq));
  for (int attempt = 0; attempt < std::max(1, max_attempts); ++attempt) {
    ++r.attempts;
    const ChatReply reply = reformatter.complete(ChatRequest::user(prompt, "reformat", temperature));
    if (!reply.ok()) {
      r.failure = "reformatter call failed: " + reply.error;
      continue;
    }
    json obj;
    try {
      obj = extract_json(reply.content).value;
    } catch (const ExtractionError&) {
      r.failure = "no JSON object in reply";
      continue;
    }
    const auto q = obj.is_object() ? obj.find("Open-ended Verifiable Question") : obj.end();
    const auto a = obj.is_object() ? obj.find("Standard Answer") : obj.end();
    if (!obj.is_object() || q == obj.end() || a == obj.end() || !q->is_string() || !a->is_string()) {
      r.failure = "reply JSON lacks \"Open-ended Verifiable Question\" or \"Standard Answer\"";
      continue;
    }
    VerifiableProblem p;
    p.id = mcq.id;
    p.question = std::string(text::trim(q->get<std::string>()));
    p.ground_truth = std::string(text::trim(a->get<std::string>()));
    p.origin_mcq_id = mcq.id;
    p.tags = {"source:" + mcq.source, "lang:" + mcq.language};
    if (auto err = validate(p)) {
      r.failure = "reformatted problem violates invariant: " + *err;
      continue;
    }
    r.problem = std::move(p);
    r.failure.clear();
    return r;
  }
  return r;
}

std::string_view to_string(CurationStage s) {
  switch (s) {
    case CurationStage::Probe: return "probe";
    case CurationStage::Length: return "length";
    case CurationStage::Judge: return "judge";
    case CurationStage::Reformat: return "reformat";
    case CurationStage::Duplicate: return "duplicate";
  }
  return "";
}

json CurationReport::to_json() const {
  json stages = json::object();
  for (CurationStage s : {CurationStage::Probe, CurationStage::Length, CurationStage::Judge,
                          CurationStage::Reformat, CurationStage::Duplicate}) {
    stages[std::string(to_string(s))] = dropped_at(s);
  }
  json verdicts = json::object();
  for (const auto& [v, n] : judge_verdicts) verdicts[std::string(to_string(v))] = n;
  json drop_list = json::array();
  for (const auto& d : drops) {
    drop_list.push_back({{"mcq_id", d.mcq_id}, {"stage", to_string(d.stage)}, {"reason", d.reason}});
  }
  return json{{"input", input}, {"output", output}, {"dropped", stages}, {"judge_verdicts", verdicts},
              {"drops", drop_list}};
}

CurationResult run_curation(const std::vector<McqRecord>& mcqs, const CurationBackends& backends,
                            const CurationConfig& config, const PromptLibrary& prompts) {
  if (!backends.judge || !backends.reformatter) throw ArgumentError("curation needs a judge and a reformatter");

  struct Outcome {
    std::optional<VerifiableProblem> problem;
    std::optional<CurationDrop> drop;
    std::optional<FilterOutcome> verdict;
  };
  std::vector<Outcome> outcomes(mcqs.size());

  parallel_for(mcqs.size(), config.concurrency, [&](std::size_t i) {
    const McqRecord& mcq = mcqs[i];
    Outcome& out = outcomes[i];
    auto drop = [&](CurationStage stage, std::string reason) {
      out.drop = CurationDrop{mcq.id, i, stage, std::move(reason)};
    };
    try {
      const ChallengeProbeResult probe = probe_challenge(mcq, backends.probes, prompts);
      if (probe.all_correct) return drop(CurationStage::Probe, "all probes answered correctly");
      if (probe.question_length < config.min_question_chars) {
        return drop(CurationStage::Length, "question has " + std::to_string(probe.question_length) + " < " +
                                               std::to_string(config.min_question_chars) + " characters");
      }
      const FilterVerdict verdict = judge_suitability(mcq, *backends.judge, prompts, config.judge_attempts);
      out.verdict = verdict.verdict;
      if (verdict.verdict != FilterOutcome::Pass) {
        std::string reason(to_string(verdict.verdict));
        if (!verdict.reason.empty()) reason += " (" + verdict.reason + ")";
        return drop(CurationStage::Judge, reason);
      }
      ReformatResult reformatted = reformat_open_ended(mcq, *backends.reformatter, prompts, config.reformat_attempts,
                                                       config.reformat_temperature);
      if (!reformatted.problem) return drop(CurationStage::Reformat, reformatted.failure);
      out.problem = std::move(reformatted.problem);
    } catch (const std::exception& e) {
      // Isolate the record: request or template errors drop it with a reason.
      out.problem.reset();
      drop(CurationStage::Reformat, std::string("error: ") + e.what());
    }
  });

  CurationResult result;
  CurationReport& report = result.report;
  report.input = mcqs.size();
  std::unordered_set<std::string> seen_questions;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    Outcome& o = outcomes[i];
    if (o.verdict) ++report.judge_verdicts[*o.verdict];
    if (o.problem) {
      if (!seen_questions.insert(text::normalize_for_overlap(o.problem->question)).second) {
        o.drop = CurationDrop{mcqs[i].id, i, CurationStage::Duplicate, "duplicate normalized question"};
      } else {
        result.problems.push_back(std::move(*o.problem));
        continue;
      }
    }
    ++report.dropped[o.drop->stage];
    report.drops.push_back(*o.drop);
  }
  report.output = result.problems.size();
  return result;
}

}  // namespace veritrace
