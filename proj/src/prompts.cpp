#include "veritrace/prompts.hpp"

#include <algorithm>

#include "veritrace/embedded_prompts.hpp"
#include "veritrace/errors.hpp"
#include "veritrace/io.hpp"

namespace veritrace {

std::string_view prompt_file_stem(PromptId id) {
  switch (id) {
    case PromptId::ProbeMcq: return "probe_mcq";
    case PromptId::FilterMcq: return "filter_mcq";
    case PromptId::ReformatMcq: return "reformat_mcq";
    case PromptId::Verifier: return "verifier";
    case PromptId::InitCot: return "init_cot";
    case PromptId::StrategyExploreNewPath: return "strategy_explore_new_path";
    case PromptId::StrategyBacktracking: return "strategy_backtracking";
    case PromptId::StrategyVerification: return "strategy_verification";
    case PromptId::StrategyCorrection: return "strategy_correction";
    case PromptId::MergeCot: return "merge_cot";
    case PromptId::FinalResponse: return "final_response";
  }
  return "";
}

const std::vector<PromptId>& all_prompt_ids() {
  static const std::vector<PromptId> ids = {
      PromptId::ProbeMcq,     PromptId::FilterMcq,          PromptId::ReformatMcq,
      PromptId::Verifier,     PromptId::InitCot,            PromptId::StrategyExploreNewPath,
      PromptId::StrategyBacktracking, PromptId::StrategyVerification, PromptId::StrategyCorrection,
      PromptId::MergeCot,     PromptId::FinalResponse,
  };
  return ids;
}

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  placeholders();  // validates brace structure
}

namespace {

// Walks the template, calling literal(sv) and placeholder(name) in order.
template <class Literal, class Placeholder>
void scan_template(const std::string& t, Literal literal, Placeholder placeholder) {
  std::size_t i = 0;
  std::size_t run = 0;
  auto flush = [&](std::size_t end) {
    if (end > run) literal(std::string_view(t).substr(run, end - run));
  };
  while (i < t.size()) {
    const char c = t[i];
    if (c == '{' && i + 1 < t.size() && t[i + 1] == '{') {
      flush(i);
      literal("{");
      i += 2;
      run = i;
    } else if (c == '}' && i + 1 < t.size() && t[i + 1] == '}') {
      flush(i);
      literal("}");
      i += 2;
      run = i;
    } else if (c == '{') {
      const std::size_t close = t.find('}', i + 1);
      const std::size_t nl = t.find('\n', i + 1);
      if (close == std::string::npos || (nl != std::string::npos && nl < close)) {
        throw ArgumentError("unterminated placeholder at offset " + std::to_string(i));
      }
      const std::string name = t.substr(i + 1, close - i - 1);
      if (name.empty() || name.find('{') != std::string::npos) {
        throw ArgumentError("malformed placeholder at offset " + std::to_string(i));
      }
      flush(i);
      placeholder(name);
      i = close + 1;
      run = i;
    } else if (c == '}') {
      throw ArgumentError("unmatched '}' at offset " + std::to_string(i));
    } else {
      ++i;
    }
  }
  flush(t.size());
}

}  // namespace

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
  std::string out;
  out.reserve(text_.size() + 256);
  scan_template(
      text_, [&](std::string_view lit) { out.append(lit); },
      [&](const std::string& name) {
        auto it = values.find(name);
        if (it == values.end()) throw ArgumentError("no value for placeholder {" + name + "}");
        out += it->second;
      });
  return out;
}

std::vector<std::string> PromptTemplate::placeholders() const {
  std::vector<std::string> names;
  scan_template(
      text_, [](std::string_view) {},
      [&](const std::string& name) {
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
      });
  return names;
}

PromptLibrary PromptLibrary::defaults() {
  PromptLibrary lib;
  for (PromptId id : all_prompt_ids()) {
    const auto stem = prompt_file_stem(id);
    bool found = false;
    for (const auto& [name, body] : detail::kEmbeddedPrompts) {
      if (name == stem) {
        lib.templates_.emplace(id, PromptTemplate(std::string(body)));
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("no embedded prompt named " + std::string(stem));
  }
  return lib;
}

PromptLibrary PromptLibrary::from_directory(const std::filesystem::path& dir) {
  PromptLibrary lib = defaults();
  for (PromptId id : all_prompt_ids()) {
    const auto path = dir / (std::string(prompt_file_stem(id)) + ".txt");
    if (std::filesystem::exists(path)) {
      lib.templates_.insert_or_assign(id, PromptTemplate(read_file(path)));
    }
  }
  return lib;
}

const PromptTemplate& PromptLibrary::get(PromptId id) const { return templates_.at(id); }

}  // namespace veritrace
