#pragma once

// Run configuration: a TOML file with ${VAR} interpolation in string values.
// Credentials are never read from the file; each backend names the
// environment variable holding its key.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "veritrace/curation.hpp"
#include "veritrace/io.hpp"
#include "veritrace/llm_gateway.hpp"
#include "veritrace/problem_bank.hpp"
#include "veritrace/rl_reward.hpp"
#include "veritrace/sft_synthesis.hpp"
#include "veritrace/trajectory_search.hpp"

namespace veritrace {

enum class BackendKind { OpenAi, Scripted, Exact };

std::string_view to_string(BackendKind k);

struct BackendSpec {
  std::string role;  // "judge", "generator", "verifier" or "probe.<name>"
  BackendKind kind = BackendKind::Scripted;
  std::string url;
  std::string model;
  std::string api_key_env;  // defaults to VERITRACE_<ROLE>_API_KEY
  std::filesystem::path script;
  double requests_per_minute = 0.0;
  int max_attempts = 4;
  int timeout_seconds = 120;

  json to_json() const;
};

struct InputPaths {
  std::optional<std::filesystem::path> mcqs;
  std::optional<std::filesystem::path> problems;
  std::optional<std::filesystem::path> eval;
  std::optional<std::filesystem::path> annotated;
  std::optional<std::filesystem::path> toy_bank;
  std::optional<std::filesystem::path> general;
  std::optional<std::filesystem::path> unconverted;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> prompts_dir;
  InputPaths inputs;
  SearchLimits limits;
  std::size_t search_concurrency = 4;
  CurationConfig curation;
  DecontaminationOptions decontamination;
  std::optional<Recipe> recipe;
  SynthesisConfig synthesis;
  PpoConfig ppo;
  int rl_iterations = 200;
  std::map<std::string, BackendSpec> backends;  // keyed by role

  /// Canonical JSON of every field that affects results (run_dir excluded).
  json to_json() const;
  /// SHA-256 of the canonical JSON.
  std::string hash() const;

  const BackendSpec* backend(const std::string& role) const;
  std::vector<const BackendSpec*> probes() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Reads the process environment.
std::optional<std::string> process_env(const std::string& name);

/// Replaces ${NAME} with the variable's value. `$$` is a literal dollar.
/// Throws ConfigError naming an unset variable.
std::string interpolate_env(std::string_view text, const EnvLookup& env);

/// Parses TOML text. Relative paths resolve against `base_dir`. Unknown
/// keys, credential-looking keys and bad values throw ConfigError.
RunConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir,
                       const EnvLookup& env = process_env);

RunConfig load_config(const std::filesystem::path& path, const EnvLookup& env = process_env);

/// Roles a command calls: "probe" stands for at least one probe.<name>.
std::vector<std::string> required_roles(std::string_view command, const RunConfig& cfg);

/// Throws ConfigError for the first required role that is missing, or whose
/// credential variable is unset (OpenAI backends, unless `dry_run`).
void check_roles(std::string_view command, const RunConfig& cfg, const EnvLookup& env, bool dry_run);

/// Backends built from a config, sharing one audit log.
class BackendSet {
 public:
  /// With `dry_run_dir`, every role is a DryRunBackend writing there.
  BackendSet(const RunConfig& cfg, std::shared_ptr<AuditLog> audit, const EnvLookup& env,
             std::optional<std::filesystem::path> dry_run_dir = std::nullopt);

  ChatBackend& get(const std::string& role) const;
  bool has(const std::string& role) const { return backends_.count(role) > 0; }
  std::vector<NamedBackend> probes() const;
  /// Verifier role as a VerifierFn (exact or LLM judge).
  VerifierFn verifier(const PromptLibrary& prompts) const;
  std::map<std::string, std::string> identities() const;

 private:
  const RunConfig& cfg_;
  std::map<std::string, std::unique_ptr<ChatBackend>> backends_;
};

}  // namespace veritrace
