#pragma once

// Command orchestration over a run directory:
//   run_dir/manifest.json   per-command status, counters, checksums, usage
//   run_dir/audit.jsonl     every backend call
//   run_dir/problems.jsonl  curate output (problems_clean.jsonl after decontaminate)
//   run_dir/traces/         one search trace per problem
//   run_dir/sft.jsonl       synthesized dataset
//   run_dir/metrics.jsonl   reward-sim curve

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "veritrace/config.hpp"
#include "veritrace/io.hpp"

namespace veritrace {

inline constexpr int kExitOk = 0;
inline constexpr int kExitEmpty = 1;   // the stage produced nothing
inline constexpr int kExitError = 2;   // configuration, input or I/O error
inline constexpr int kExitLocked = 3;  // another command holds the run directory

const std::vector<std::string>& pipeline_commands();

class LockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exclusive `.lock` file holding the owner's pid. A lock left behind by a
/// dead process is taken over.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct CommandFlags {
  bool dry_run = false;
  bool force = false;
};

struct CommandResult {
  int exit_code = kExitOk;
  bool skipped = false;  // already complete; nothing was re-run
  std::string message;
  json summary;
};

/// Checksum of every file under `dir`, combined in path order.
std::string directory_checksum(const std::filesystem::path& dir);

/// Runs one command against cfg.run_dir. Throws ConfigError, IoError,
/// ArgumentError or LockError; the CLI maps them to exit codes.
CommandResult run_command(std::string_view command, const RunConfig& cfg, const CommandFlags& flags,
                          const EnvLookup& env = process_env, std::ostream* log = nullptr);

json read_manifest(const std::filesystem::path& run_dir);

}  // namespace veritrace
