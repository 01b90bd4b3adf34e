#include "veritrace/problem_bank.hpp"

#include <cmath>
#include <cstring>
#include <regex>
#include <unordered_set>

#include "veritrace/errors.hpp"
#include "veritrace/parallel.hpp"
#include "veritrace/random.hpp"
#include "veritrace/text.hpp"

namespace veritrace {

namespace {

const std::regex& option_label_regex() {
  // "A)" not preceded by an alphanumeric, or "(B" not followed by one.
  static const std::regex re(R"((^|[^A-Za-z0-9])[A-H]\)|\([A-H]([^A-Za-z0-9]|$))");
  return re;
}

const std::regex& option_line_regex() {
  static const std::regex re(R"(^\s*\(?[A-H][\).:]\s+\S)");
  return re;
}

std::string require_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw ArgumentError(std::string("field \"") + key + "\" missing or not a string");
  }
  return it->get<std::string>();
}

}  // namespace

bool contains_option_label(std::string_view s) {
  return std::regex_search(s.begin(), s.end(), option_label_regex());
}

bool contains_option_list(std::string_view s) {
  int hits = 0;
  for (auto line : text::split_lines(s)) {
    if (std::regex_search(line.begin(), line.end(), option_line_regex())) ++hits;
  }
  return hits >= 2;
}

std::optional<std::string> validate(const McqRecord& mcq) {
  if (mcq.id.empty()) return "id is empty";
  if (text::trim(mcq.question).empty()) return "question is empty";
  if (mcq.options.size() < 2 || mcq.options.size() > 8) {
    return "options must have 2..8 entries, found " + std::to_string(mcq.options.size());
  }
  for (const auto& [label, body] : mcq.options) {
    if (label.size() != 1 || label[0] < 'A' || label[0] > 'H') {
      return "option label \"" + label + "\" is not a single letter A..H";
    }
  }
  if (!mcq.options.contains(mcq.answer_label)) {
    return "answer_label \"" + mcq.answer_label + "\" is not a key of options";
  }
  return std::nullopt;
}

std::optional<std::string> validate(const VerifiableProblem& problem) {
  if (problem.id.empty()) return "id is empty";
  if (text::trim(problem.question).empty()) return "question is empty";
  if (text::trim(problem.ground_truth).empty()) return "ground_truth is empty";
  if (contains_option_label(problem.ground_truth)) return "ground_truth contains an option label";
  if (contains_option_list(problem.question)) return "question contains an enumerated option list";
  return std::nullopt;
}

json to_json(const McqRecord& mcq) {
  return json{{"id", mcq.id},
              {"question", mcq.question},
              {"options", mcq.options},
              {"answer_label", mcq.answer_label},
              {"source", mcq.source},
              {"language", mcq.language}};
}

json to_json(const VerifiableProblem& p) {
  return json{{"id", p.id},
              {"question", p.question},
              {"ground_truth", p.ground_truth},
              {"origin_mcq_id", p.origin_mcq_id ? json(*p.origin_mcq_id) : json(nullptr)},
              {"tags", p.tags}};
}

json to_json(const BankSplit& s) {
  return json{{"search_set", s.search_set}, {"rl_set", s.rl_set}, {"seed", s.seed}};
}

McqRecord mcq_from_json(const json& j) {
  if (!j.is_object()) throw ArgumentError("record is not a JSON object");
  McqRecord m;
  m.id = require_string(j, "id");
  m.question = require_string(j, "question");
  auto opts = j.find("options");
  if (opts == j.end() || !opts->is_object()) throw ArgumentError("field \"options\" missing or not an object");
  for (const auto& [label, body] : opts->items()) {
    if (!body.is_string()) throw ArgumentError("option \"" + label + "\" is not a string");
    m.options.emplace(label, body.get<std::string>());
  }
  m.answer_label = require_string(j, "answer_label");
  if (j.contains("source")) m.source = require_string(j, "source");
  if (j.contains("language")) m.language = require_string(j, "language");
  return m;
}

VerifiableProblem problem_from_json(const json& j) {
  if (!j.is_object()) throw ArgumentError("record is not a JSON object");
  VerifiableProblem p;
  p.id = require_string(j, "id");
  p.question = require_string(j, "question");
  p.ground_truth = require_string(j, "ground_truth");
  if (auto it = j.find("origin_mcq_id"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw ArgumentError("field \"origin_mcq_id\" is not a string");
    p.origin_mcq_id = it->get<std::string>();
  }
  if (auto it = j.find("tags"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ArgumentError("field \"tags\" is not an array");
    for (const auto& t : *it) {
      if (!t.is_string()) throw ArgumentError("tag is not a string");
      p.tags.insert(t.get<std::string>());
    }
  }
  return p;
}

BankSplit split_from_json(const json& j) {
  BankSplit s;
  s.search_set = j.at("search_set").get<std::vector<std::string>>();
  s.rl_set = j.at("rl_set").get<std::vector<std::string>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

std::string render_options(const McqRecord& mcq) {
  std::string out;
  for (const auto& [label, body] : mcq.options) {
    if (!out.empty()) out += '\n';
    out += label + ". " + body;
  }
  return out;
}

namespace {

template <class Record, class Parse>
IngestResult<Record> ingest_impl(const std::filesystem::path& path, Parse parse) {
  IngestResult<Record> result;
  std::unordered_set<std::string> seen;
  for (auto& line : read_jsonl(path)) {
    if (!line.error.empty()) {
      result.issues.push_back({line.line_no, "", line.error});
      continue;
    }
    std::string id;
    if (line.value.is_object() && line.value.contains("id") && line.value["id"].is_string()) {
      id = line.value["id"].template get<std::string>();
    }
    try {
      Record r = parse(line.value);
      if (auto err = validate(r)) {
        result.issues.push_back({line.line_no, id, "invariant violated: " + *err});
        continue;
      }
      if (!seen.insert(r.id).second) {
        result.issues.push_back({line.line_no, id, "duplicate id"});
        continue;
      }
      result.records.push_back(std::move(r));
    } catch (const ArgumentError& e) {
      result.issues.push_back({line.line_no, id, e.what()});
    } catch (const json::exception& e) {
      result.issues.push_back({line.line_no, id, e.what()});
    }
  }
  return result;
}

}  // namespace

IngestResult<McqRecord> ingest_mcqs(const std::filesystem::path& path) {
  return ingest_impl<McqRecord>(path, mcq_from_json);
}

IngestResult<VerifiableProblem> ingest_problems(const std::filesystem::path& path) {
  return ingest_impl<VerifiableProblem>(path, problem_from_json);
}

void write_mcqs(const std::filesystem::path& path, const std::vector<McqRecord>& records) {
  std::string out;
  for (const auto& r : records) out += dump_line(to_json(r)) + '\n';
  atomic_write(path, out);
}

void write_problems(const std::filesystem::path& path, const std::vector<VerifiableProblem>& records) {
  std::string out;
  for (const auto& r : records) out += dump_line(to_json(r)) + '\n';
  atomic_write(path, out);
}

BankSplit split(const std::vector<VerifiableProblem>& problems, double sft_fraction, std::uint64_t seed) {
  if (!(sft_fraction > 0.0 && sft_fraction < 1.0)) {
    throw ArgumentError("sft_fraction must lie in (0,1), got " + std::to_string(sft_fraction));
  }
  if (problems.empty()) throw ArgumentError("cannot split an empty problem list");
  std::vector<std::string> ids;
  ids.reserve(problems.size());
  for (const auto& p : problems) ids.push_back(p.id);
  Rng rng(seed);
  rng.shuffle(ids.begin(), ids.end());
  const auto n_search = static_cast<std::size_t>(
      std::floor(sft_fraction * static_cast<double>(ids.size()) + 0.5));
  BankSplit out;
  out.seed = seed;
  out.search_set.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_search));
  out.rl_set.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_search), ids.end());
  return out;
}

// ---------------------------------------------------------------------------
// Decontamination

namespace {

constexpr std::uint64_t kHashBase = 1099511628211ULL;

std::uint64_t pow_base(std::size_t e) {
  std::uint64_t r = 1;
  for (std::size_t i = 0; i < e; ++i) r *= kHashBase;
  return r;
}

template <class Visit>
void for_each_window_hash(std::string_view s, std::size_t window, std::uint64_t top, Visit visit) {
  if (s.size() < window) return;
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < window; ++i) h = h * kHashBase + static_cast<unsigned char>(s[i]);
  if (!visit(std::size_t{0}, h)) return;
  for (std::size_t i = window; i < s.size(); ++i) {
    h = (h - static_cast<unsigned char>(s[i - window]) * top) * kHashBase + static_cast<unsigned char>(s[i]);
    if (!visit(i - window + 1, h)) return;
  }
}

}  // namespace

OverlapIndex::OverlapIndex(const std::vector<std::string>& eval_texts, std::size_t window)
    : window_(window) {
  if (window < 8) throw ArgumentError("decontamination window must be >= 8, got " + std::to_string(window));
  evals_.reserve(eval_texts.size());
  for (const auto& t : eval_texts) evals_.push_back(text::normalize_for_overlap(t));
  const std::uint64_t top = pow_base(window - 1);
  for (std::size_t e = 0; e < evals_.size(); ++e) {
    for_each_window_hash(evals_[e], window_, top, [&](std::size_t pos, std::uint64_t h) {
      buckets_[h].emplace_back(static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(pos));
      return true;
    });
  }
}

std::optional<OverlapMatch> OverlapIndex::first_match(std::string_view normalized) const {
  std::optional<OverlapMatch> found;
  const std::uint64_t top = pow_base(window_ - 1);
  for_each_window_hash(normalized, window_, top, [&](std::size_t pos, std::uint64_t h) {
    auto it = buckets_.find(h);
    if (it == buckets_.end()) return true;
    // Candidates are stored in (eval index, offset) order, so the first
    // verified hit is the canonical one.
    for (const auto& [e, epos] : it->second) {
      if (std::memcmp(normalized.data() + pos, evals_[e].data() + epos, window_) == 0) {
        found = OverlapMatch{pos, e, epos};
        return false;
      }
    }
    return true;
  });
  return found;
}

std::string OverlapIndex::evidence(std::string_view normalized, const OverlapMatch& m) const {
  const std::string& ev = evals_[m.eval_index];
  std::size_t begin = m.text_pos;
  std::size_t ebegin = m.eval_pos;
  while (begin > 0 && ebegin > 0 && normalized[begin - 1] == ev[ebegin - 1]) {
    --begin;
    --ebegin;
  }
  std::size_t end = m.text_pos + window_;
  std::size_t eend = m.eval_pos + window_;
  while (end < normalized.size() && eend < ev.size() && normalized[end] == ev[eend]) {
    ++end;
    ++eend;
  }
  return std::string(normalized.substr(begin, end - begin));
}

DecontaminationResult decontaminate(const std::vector<VerifiableProblem>& problems,
                                    const std::vector<std::string>& eval_texts,
                                    const DecontaminationOptions& options) {
  const OverlapIndex index(eval_texts, options.window);
  struct Hit {
    std::optional<OverlapMatch> match;
    std::string evidence;
  };
  std::vector<Hit> hits(problems.size());
  parallel_for(problems.size(), options.concurrency, [&](std::size_t i) {
    std::string probe = text::normalize_for_overlap(problems[i].question);
    auto m = index.first_match(probe);
    if (!m && options.include_answers) {
      probe = text::normalize_for_overlap(problems[i].ground_truth);
      m = index.first_match(probe);
    }
    if (m) hits[i] = Hit{m, index.evidence(probe, *m)};
  });

  DecontaminationResult out;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    if (hits[i].match) {
      out.removed.push_back({problems[i], i, hits[i].match->eval_index, std::move(hits[i].evidence)});
    } else {
      out.kept.push_back(problems[i]);
    }
  }
  return out;
}

std::vector<json> removal_report(const DecontaminationResult& result, std::size_t window) {
  std::vector<json> out;
  for (const auto& r : result.removed) {
    out.push_back(json{{"id", r.problem.id},
                       {"reason", "shares >= " + std::to_string(window) + " consecutive characters with eval text #" +
                                      std::to_string(r.eval_index)},
                       {"evidence", r.evidence}});
  }
  return out;
}

std::vector<std::string> load_eval_texts(const std::filesystem::path& path) {
  std::vector<std::string> out;
  for (const auto& line : read_jsonl(path)) {
    if (!line.error.empty()) {
      throw IoError(path.string() + ":" + std::to_string(line.line_no) + ": " + line.error);
    }
    const json& v = line.value;
    if (v.is_string()) {
      out.push_back(v.get<std::string>());
    } else if (v.is_object() && v.contains("text") && v["text"].is_string()) {
      out.push_back(v["text"].get<std::string>());
    } else if (v.is_object() && v.contains("question") && v["question"].is_string()) {
      out.push_back(v["question"].get<std::string>());
    } else {
      throw IoError(path.string() + ":" + std::to_string(line.line_no) + ": expected a string or {\"text\": ...}");
    }
  }
  return out;
}

}  // namespace veritrace
