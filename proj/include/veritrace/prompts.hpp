#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace veritrace {

enum class PromptId {
  ProbeMcq,
  FilterMcq,
  ReformatMcq,
  Verifier,
  InitCot,
  StrategyExploreNewPath,
  StrategyBacktracking,
  StrategyVerification,
  StrategyCorrection,
  MergeCot,
  FinalResponse,
};

/// File stem under prompts/, e.g. "filter_mcq".
std::string_view prompt_file_stem(PromptId id);

const std::vector<PromptId>& all_prompt_ids();

/// Text with `{Name}` placeholders. `{{` and `}}` render as literal braces.
class PromptTemplate {
 public:
  explicit PromptTemplate(std::string text);

  /// Throws ArgumentError for a placeholder without a value.
  std::string render(const std::map<std::string, std::string>& values) const;

  /// Placeholder names in order of first appearance.
  std::vector<std::string> placeholders() const;

  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

class PromptLibrary {
 public:
  /// The templates compiled into the binary (copies of prompts/*.txt).
  static PromptLibrary defaults();

  /// Defaults overridden by any `<stem>.txt` found in `dir`.
  static PromptLibrary from_directory(const std::filesystem::path& dir);

  const PromptTemplate& get(PromptId id) const;

  std::string render(PromptId id, const std::map<std::string, std::string>& values) const {
    return get(id).render(values);
  }

 private:
  std::map<PromptId, PromptTemplate> templates_;
};

}  // namespace veritrace
