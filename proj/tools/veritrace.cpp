// veritrace: run one pipeline stage against a run directory.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "veritrace/config.hpp"
#include "veritrace/errors.hpp"
#include "veritrace/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_depth;
  std::optional<int> max_attempts;
  bool dry_run = false;
  bool force = false;
  bool paper_config = false;
  bool print_summary = false;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "TOML run configuration")->check(CLI::ExistingFile);
  sub->add_option("--run-dir", f.run_dir, "run directory (overrides run_dir in the config)");
  sub->add_option("--seed", f.seed, "base random seed");
  sub->add_option("--max-depth", f.max_depth, "refinement iterations per search attempt (N)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--max-attempts", f.max_attempts, "search attempts per problem (T)")->check(CLI::PositiveNumber);
  sub->add_flag("--dry-run", f.dry_run, "render prompts to run_dir/dry_run without calling any model");
  sub->add_flag("--force", f.force, "reuse a run directory created with a different configuration, and re-run");
  sub->add_flag("--paper-config", f.paper_config,
                "PPO preset: clip 0.2, beta 0.03, 3 epochs, discount 1.0, value coef 1.0, batch 128");
  sub->add_flag("--summary", f.print_summary, "print the command summary as JSON");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Verifiable-problem reasoning data pipeline: curate, search, synthesize, reward-sim, "
               "verify-eval, decontaminate"};
  app.require_subcommand(1);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"curate", "turn multiple-choice questions into verifiable open-ended problems"},
      {"decontaminate", "drop problems sharing a long verbatim window with evaluation texts"},
      {"search", "search for verified reasoning trajectories (resumable)"},
      {"synthesize", "merge trajectories into SFT records and assemble sft.jsonl"},
      {"reward-sim", "run the PPO sandbox on a toy bank and write metrics.jsonl"},
      {"verify-eval", "score the LLM verifier and exact match against human labels"},
  };
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), flags);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version exit 0; usage errors share the error exit code
    return app.exit(e) == 0 ? veritrace::kExitOk : veritrace::kExitError;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    veritrace::RunConfig cfg;
    if (!flags.config.empty()) cfg = veritrace::load_config(flags.config);
    if (!flags.run_dir.empty()) cfg.run_dir = flags.run_dir;
    if (flags.seed) {
      cfg.seed = *flags.seed;
      cfg.ppo.seed = *flags.seed;
    }
    if (flags.max_depth) cfg.limits.max_depth = *flags.max_depth;
    if (flags.max_attempts) cfg.limits.max_attempts = *flags.max_attempts;
    if (flags.paper_config) {
      const auto preset = veritrace::PpoConfig::large_scale_preset();
      cfg.ppo.clip_range = preset.clip_range;
      cfg.ppo.beta = preset.beta;
      cfg.ppo.ppo_epochs = preset.ppo_epochs;
      cfg.ppo.discount = preset.discount;
      cfg.ppo.value_coef = preset.value_coef;
      cfg.ppo.batch_size = preset.batch_size;
    }
    veritrace::CommandFlags cf;
    cf.dry_run = flags.dry_run;
    cf.force = flags.force;
    const auto res = veritrace::run_command(command, cfg, cf, veritrace::process_env, &std::cerr);
    std::cout << res.message << "\n";
    if (flags.print_summary) std::cout << res.summary.dump(2) << "\n";
    return res.exit_code;
  } catch (const veritrace::LockError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return veritrace::kExitLocked;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return veritrace::kExitError;
  }
}
