#include "veritrace/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <ostream>

#include "veritrace/curation.hpp"
#include "veritrace/errors.hpp"
#include "veritrace/problem_bank.hpp"
#include "veritrace/sandbox.hpp"
#include "veritrace/sft_synthesis.hpp"
#include "veritrace/trajectory_search.hpp"
#include "veritrace/verifier.hpp"

namespace veritrace {

namespace fs = std::filesystem;

const std::vector<std::string>& pipeline_commands() {
  static const std::vector<std::string> kCommands = {"curate",     "decontaminate", "search",
                                                     "synthesize", "reward-sim",    "verify-eval"};
  return kCommands;
}

// ---------------------------------------------------------------------------

namespace {

bool try_create_lock(const fs::path& path) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
  if (fd < 0) {
    if (errno == EEXIST) return false;
    throw IoError("cannot create lock " + path.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
  if (written != static_cast<ssize_t>(pid.size())) throw IoError("cannot write lock " + path.string());
  return true;
}

bool owner_alive(const fs::path& path) {
  std::ifstream in(path);
  long pid = 0;
  if (!(in >> pid) || pid <= 0) return true;  // unreadable: assume held
  return ::kill(static_cast<pid_t>(pid), 0) == 0 || errno == EPERM;
}

}  // namespace

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / ".lock") {
  fs::create_directories(run_dir);
  if (try_create_lock(path_)) return;
  if (!owner_alive(path_)) {
    fs::remove(path_);
    if (try_create_lock(path_)) return;
  }
  throw LockError("run directory " + run_dir.string() + " is locked by another command (" + path_.string() + ")");
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------

std::string directory_checksum(const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::exists(dir)) {
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& f : files) {
    listing += fs::relative(f, dir).generic_string() + " " + sha256_hex(read_file(f)) + "\n";
  }
  return sha256_hex(listing);
}

json read_manifest(const fs::path& run_dir) {
  const fs::path path = run_dir / "manifest.json";
  if (!fs::exists(path)) return json::object();
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoError("corrupt manifest " + path.string() + ": " + e.what());
  }
}

namespace {

std::string checksum_of(const fs::path& p) {
  if (fs::is_directory(p)) return directory_checksum(p);
  if (fs::is_regular_file(p)) return sha256_hex(read_file(p));
  return "missing";
}

json usage_json(const TokenUsage& u) { return {{"prompt_tokens", u.prompt_tokens}, {"output_tokens", u.output_tokens}}; }

struct Context {
  const RunConfig& cfg;
  CommandFlags flags;
  const EnvLookup& env;
  std::ostream* log;
  fs::path run_dir;
  PromptLibrary prompts;
  std::shared_ptr<AuditLog> audit;
  std::unique_ptr<BackendSet> backends;
  json artifacts = json::object();

  void say(const std::string& msg) const {
    if (log) *log << msg << "\n";
  }
  void artifact(const std::string& name) { artifacts[name] = checksum_of(run_dir / name); }
  fs::path dry_run_dir() const { return run_dir / "dry_run"; }
};

fs::path decon_source(const RunConfig& cfg) {
  const fs::path curated = cfg.run_dir / "problems.jsonl";
  if (fs::exists(curated)) return curated;
  if (cfg.inputs.problems) return *cfg.inputs.problems;
  throw ConfigError("no problems to work on: run curate first or set inputs.problems");
}

fs::path search_source(const RunConfig& cfg) {
  const fs::path clean = cfg.run_dir / "problems_clean.jsonl";
  if (fs::exists(clean)) return clean;
  return decon_source(cfg);
}

const fs::path& require(const std::optional<fs::path>& p, const char* key) {
  if (!p) throw ConfigError(std::string("inputs.") + key + " is not set");
  if (!fs::exists(*p)) throw ConfigError(std::string("inputs.") + key + " does not exist: " + p->string());
  return *p;
}

/// Files whose content determines a command's output.
std::vector<fs::path> command_inputs(std::string_view command, const RunConfig& cfg) {
  std::vector<fs::path> in;
  auto scripts = [&](std::initializer_list<const char*> roles) {
    for (const char* role : roles) {
      if (std::string_view(role) == "probe") {
        for (const auto* s : cfg.probes())
          if (s->kind == BackendKind::Scripted) in.push_back(s->script);
        continue;
      }
      if (const auto* s = cfg.backend(role); s && s->kind == BackendKind::Scripted) in.push_back(s->script);
    }
  };
  if (command == "curate") {
    in.push_back(require(cfg.inputs.mcqs, "mcqs"));
    scripts({"probe", "judge", "generator"});
  } else if (command == "decontaminate") {
    in.push_back(decon_source(cfg));
    in.push_back(require(cfg.inputs.eval, "eval"));
  } else if (command == "search") {
    in.push_back(search_source(cfg));
    scripts({"generator", "verifier"});
  } else if (command == "synthesize") {
    in.push_back(search_source(cfg));
    in.push_back(cfg.run_dir / "traces");
    if (cfg.recipe) {
      if (cfg.recipe->general_domain > 0) in.push_back(require(cfg.inputs.general, "general"));
      if (cfg.recipe->unconverted_mcq > 0) in.push_back(require(cfg.inputs.unconverted, "unconverted"));
    }
    scripts({"generator", "verifier"});
  } else if (command == "reward-sim") {
    if (cfg.inputs.toy_bank) in.push_back(require(cfg.inputs.toy_bank, "toy_bank"));
  } else if (command == "verify-eval") {
    in.push_back(require(cfg.inputs.annotated, "annotated"));
    scripts({"verifier"});
  }
  return in;
}

std::vector<VerifiableProblem> load_problems(const fs::path& path, Context& ctx) {
  auto r = ingest_problems(path);
  for (const auto& issue : r.issues)
    ctx.say("warning: " + path.string() + ":" + std::to_string(issue.line) + ": " + issue.reason);
  return std::move(r.records);
}

// ---------------------------------------------------------------------------

CommandResult cmd_curate(Context& ctx) {
  const auto ingested = ingest_mcqs(*ctx.cfg.inputs.mcqs);
  CurationBackends b;
  b.probes = ctx.backends->probes();
  b.judge = &ctx.backends->get("judge");
  b.reformatter = &ctx.backends->get("generator");
  const CurationResult cur = run_curation(ingested.records, b, ctx.cfg.curation, ctx.prompts);

  json issues = json::array();
  for (const auto& i : ingested.issues) issues.push_back({{"line", i.line}, {"id", i.id}, {"reason", i.reason}});
  json report = cur.report.to_json();
  report["ingest_issues"] = issues;

  CommandResult res;
  res.summary = {{"input_records", ingested.records.size()},
                 {"ingest_issues", ingested.issues.size()},
                 {"problems", cur.problems.size()},
                 {"report", cur.report.to_json()}};
  if (!ctx.flags.dry_run) {
    write_problems(ctx.run_dir / "problems.jsonl", cur.problems);
    atomic_write(ctx.run_dir / "curation_report.json", report.dump(2) + "\n");
    ctx.artifact("problems.jsonl");
    ctx.artifact("curation_report.json");
  }
  if (cur.problems.empty() && !ctx.flags.dry_run) {
    res.exit_code = kExitEmpty;
    res.message = "curation kept no problems; stage report: " + cur.report.to_json().dump();
  } else {
    res.message = "curated " + std::to_string(cur.problems.size()) + " of " + std::to_string(ingested.records.size()) +
                  " records";
  }
  return res;
}

CommandResult cmd_decontaminate(Context& ctx) {
  const fs::path source = decon_source(ctx.cfg);
  const auto problems = load_problems(source, ctx);
  const auto evals = load_eval_texts(*ctx.cfg.inputs.eval);
  const auto result = decontaminate(problems, evals, ctx.cfg.decontamination);
  CommandResult res;
  res.summary = {{"source", source.generic_string()},
                 {"input", problems.size()},
                 {"kept", result.kept.size()},
                 {"removed", result.removed.size()},
                 {"window", ctx.cfg.decontamination.window}};
  res.message = "removed " + std::to_string(result.removed.size()) + " of " + std::to_string(problems.size()) +
                " problems";
  if (!ctx.flags.dry_run) {
    write_problems(ctx.run_dir / "problems_clean.jsonl", result.kept);
    atomic_write(ctx.run_dir / "decontamination_report.jsonl",
                 to_jsonl(removal_report(result, ctx.cfg.decontamination.window)));
    ctx.artifact("problems_clean.jsonl");
    ctx.artifact("decontamination_report.jsonl");
  }
  return res;
}

CommandResult cmd_search(Context& ctx) {
  const auto problems = load_problems(search_source(ctx.cfg), ctx);
  Stage1Options opt;
  opt.limits = ctx.cfg.limits;
  opt.seed = ctx.cfg.seed;
  opt.concurrency = ctx.cfg.search_concurrency;
  const VerifierFn verifier = ctx.backends->verifier(ctx.prompts);
  std::optional<TraceStore> store;
  if (!ctx.flags.dry_run) store.emplace(ctx.run_dir / "traces");
  const Stage1Result r =
      run_stage1(problems, ctx.backends->get("generator"), verifier, opt, ctx.prompts, store ? &*store : nullptr);

  CommandResult res;
  res.summary = r.summary.to_json();
  if (!ctx.flags.dry_run) {
    atomic_write(ctx.run_dir / "search_summary.json", res.summary.dump(2) + "\n");
    ctx.artifact("traces");
    ctx.artifact("search_summary.json");
  }
  res.message = std::to_string(r.summary.succeeded) + " of " + std::to_string(r.summary.total) +
                " problems found a verified trajectory";
  if (!r.summary.errors.empty()) {
    res.exit_code = kExitError;
    res.message += "; " + std::to_string(r.summary.errors.size()) + " problems failed (rerun to resume)";
  }
  return res;
}

CommandResult cmd_synthesize(Context& ctx) {
  const auto problems = load_problems(search_source(ctx.cfg), ctx);
  const TraceStore store(ctx.run_dir / "traces");
  std::vector<SearchTrace> traces;
  for (const auto& p : problems) {
    if (store.contains(p.id)) traces.push_back(store.load(p.id));
  }
  if (traces.empty()) throw ConfigError("no search traces in " + store.dir().string() + ": run search first");

  SynthesisConfig scfg = ctx.cfg.synthesis;
  const VerifierFn verifier = ctx.backends->verifier(ctx.prompts);
  const SynthesisResult syn =
      synthesize(problems, traces, ctx.backends->get("generator"), verifier, ctx.prompts, scfg);

  std::vector<SftRecord> records = syn.records;
  if (ctx.cfg.recipe) {
    std::vector<SftRecord> general;
    std::vector<McqRecord> unconverted;
    if (ctx.cfg.inputs.general) general = ingest_sft(*ctx.cfg.inputs.general);
    if (ctx.cfg.inputs.unconverted) unconverted = ingest_mcqs(*ctx.cfg.inputs.unconverted).records;
    records = assemble_dataset(syn.records, unconverted, general, *ctx.cfg.recipe, ctx.cfg.seed);
  }

  CommandResult res;
  const DatasetStats stats = compute_stats(records);
  res.summary = {{"synthesis", syn.report.to_json()},
                 {"stats", stats.to_json()},
                 {"recipe", ctx.cfg.recipe ? ctx.cfg.recipe->to_json() : json(nullptr)},
                 {"seed", ctx.cfg.seed}};
  if (!ctx.flags.dry_run) {
    emit(records, ctx.run_dir / "sft.jsonl");
    atomic_write(ctx.run_dir / "synthesis_report.json", res.summary.dump(2) + "\n");
    ctx.artifact("sft.jsonl");
    ctx.artifact("synthesis_report.json");
  }
  res.message = "wrote " + std::to_string(records.size()) + " records (" + std::to_string(syn.records.size()) +
                " searched, " + std::to_string(syn.report.drops.size()) + " dropped)";
  if (records.empty() && !ctx.flags.dry_run) res.exit_code = kExitEmpty;
  return res;
}

CommandResult cmd_reward_sim(Context& ctx) {
  const auto bank = ctx.cfg.inputs.toy_bank ? load_toy_bank(*ctx.cfg.inputs.toy_bank)
                                            : make_toy_bank(50, 4, ctx.cfg.seed);
  SandboxOptions opt;
  opt.ppo = ctx.cfg.ppo;
  opt.ppo.seed = ctx.cfg.seed;
  opt.iterations = ctx.cfg.rl_iterations;
  CommandResult res;
  if (ctx.flags.dry_run) {
    res.summary = {{"problems", bank.size()}, {"iterations", opt.iterations}, {"ppo", opt.ppo.to_json()}};
    res.message = "dry run: would train on " + std::to_string(bank.size()) + " toy problems";
    return res;
  }
  const SandboxResult r = run_stage2_sandbox(bank, opt);
  std::vector<json> rows;
  for (const auto& m : r.curve) rows.push_back(m.to_json());
  atomic_write(ctx.run_dir / "metrics.jsonl", to_jsonl(rows));
  atomic_write(ctx.run_dir / "policy.json", r.final_policy.to_json().dump() + "\n");
  ctx.artifact("metrics.jsonl");
  ctx.artifact("policy.json");
  res.summary = {{"problems", bank.size()},
                 {"iterations", opt.iterations},
                 {"ppo", opt.ppo.to_json()},
                 {"first_mean_rule_reward", r.curve.empty() ? 0.0 : r.curve.front().mean_rule_reward},
                 {"last_mean_rule_reward", r.curve.empty() ? 0.0 : r.curve.back().mean_rule_reward},
                 {"final_expected_rule_reward", r.final_expected_rule_reward},
                 {"max_total_variation", r.max_total_variation}};
  char buf[128];
  std::snprintf(buf, sizeof buf, "final expected rule reward %.4f after %d updates", r.final_expected_rule_reward,
                opt.iterations);
  res.message = buf;
  return res;
}

CommandResult cmd_verify_eval(Context& ctx) {
  const auto samples = load_annotated(*ctx.cfg.inputs.annotated);
  const auto llm = evaluate_verifier(samples, VerifyMethod::LlmJudge, ctx.backends->verifier(ctx.prompts),
                                     ctx.cfg.search_concurrency);
  const auto exact = evaluate_verifier(samples, VerifyMethod::ExactMatch, make_exact_verifier());
  CommandResult res;
  res.summary = {{"samples", samples.size()},
                 {"llm", {{"accuracy", llm.accuracy}, {"errors", llm.errors}}},
                 {"exact", {{"accuracy", exact.accuracy}}}};
  if (!ctx.flags.dry_run) {
    atomic_write(ctx.run_dir / "verify_eval.json",
                 json({{"llm", llm.to_json()}, {"exact", exact.to_json()}}).dump(2) + "\n");
    ctx.artifact("verify_eval.json");
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "judge accuracy %.4f, exact-match accuracy %.4f on %zu samples", llm.accuracy,
                exact.accuracy, samples.size());
  res.message = buf;
  return res;
}

bool artifacts_intact(const json& entry, const fs::path& run_dir) {
  if (!entry.contains("artifacts")) return false;
  for (const auto& [name, sum] : entry["artifacts"].items()) {
    if (checksum_of(run_dir / name) != sum.get<std::string>()) return false;
  }
  return true;
}

bool inputs_unchanged(const json& entry, const std::vector<fs::path>& inputs) {
  if (!entry.contains("inputs")) return false;
  const json& rec = entry["inputs"];
  if (rec.size() != inputs.size()) return false;
  for (const auto& p : inputs) {
    const auto key = p.generic_string();
    if (!rec.contains(key) || rec[key] != checksum_of(p)) return false;
  }
  return true;
}

}  // namespace

CommandResult run_command(std::string_view command, const RunConfig& cfg, const CommandFlags& flags,
                          const EnvLookup& env, std::ostream* log) {
  const auto& cmds = pipeline_commands();
  if (std::find(cmds.begin(), cmds.end(), command) == cmds.end())
    throw ArgumentError("unknown command \"" + std::string(command) + "\"");
  if (cfg.run_dir.empty()) throw ConfigError("no run directory: set run_dir in the config or pass --run-dir");
  check_roles(command, cfg, env, flags.dry_run);

  const std::string cmd(command);
  RunLock lock(cfg.run_dir);
  json manifest = read_manifest(cfg.run_dir);
  const std::string hash = cfg.hash();
  if (manifest.contains("config_hash") && manifest["config_hash"] != hash && !flags.force) {
    throw ConfigError("run directory " + cfg.run_dir.string() + " was created with a different configuration (" +
                      manifest["config_hash"].get<std::string>().substr(0, 12) + " vs " + hash.substr(0, 12) +
                      "); pass --force to reuse it");
  }
  const auto inputs = command_inputs(command, cfg);

  if (!flags.dry_run && !flags.force && manifest.contains("commands") && manifest["commands"].contains(cmd)) {
    const json& entry = manifest["commands"][cmd];
    if (entry.value("status", "") == "complete" && artifacts_intact(entry, cfg.run_dir) &&
        inputs_unchanged(entry, inputs)) {
      CommandResult res;
      res.skipped = true;
      res.exit_code = entry.value("exit_code", kExitOk);
      res.summary = entry.value("summary", json::object());
      res.message = cmd + " already complete in " + cfg.run_dir.string() + "; nothing to do";
      return res;
    }
  }

  Context ctx{cfg, flags, env, log, cfg.run_dir,
              cfg.prompts_dir ? PromptLibrary::from_directory(*cfg.prompts_dir) : PromptLibrary::defaults(),
              nullptr, nullptr};
  const fs::path audit_path = cfg.run_dir / "audit.jsonl";
  ctx.audit = flags.dry_run ? std::make_shared<AuditLog>() : std::make_shared<AuditLog>(audit_path);
  ctx.backends = std::make_unique<BackendSet>(
      cfg, ctx.audit, env, flags.dry_run ? std::optional<fs::path>(ctx.dry_run_dir()) : std::nullopt);

  json entry = json::object();
  if (!flags.dry_run) {
    manifest["config_hash"] = hash;
    if (!manifest.contains("created")) manifest["created"] = utc_timestamp();
    manifest["seed"] = cfg.seed;
    entry["status"] = "running";
    entry["started"] = utc_timestamp();
    manifest["commands"][cmd] = entry;
    atomic_write(cfg.run_dir / "manifest.json", manifest.dump(2) + "\n");
  }

  CommandResult res;
  if (command == "curate") res = cmd_curate(ctx);
  else if (command == "decontaminate") res = cmd_decontaminate(ctx);
  else if (command == "search") res = cmd_search(ctx);
  else if (command == "synthesize") res = cmd_synthesize(ctx);
  else if (command == "reward-sim") res = cmd_reward_sim(ctx);
  else res = cmd_verify_eval(ctx);

  if (flags.dry_run) {
    res.message = "dry run: prompts written under " + ctx.dry_run_dir().string() + "; " + res.message;
    return res;
  }

  json input_sums = json::object();
  for (const auto& p : inputs) input_sums[p.generic_string()] = checksum_of(p);
  entry["status"] = res.exit_code == kExitError ? "partial" : "complete";
  entry["finished"] = utc_timestamp();
  entry["exit_code"] = res.exit_code;
  entry["message"] = res.message;
  entry["summary"] = res.summary;
  entry["inputs"] = input_sums;
  entry["artifacts"] = ctx.artifacts;
  entry["token_usage"] = usage_json(ctx.audit->totals());
  entry["backends"] = ctx.backends->identities();
  manifest["commands"][cmd] = entry;
  manifest["updated"] = utc_timestamp();
  manifest["token_usage"] = usage_json(fs::exists(audit_path) ? AuditLog::sum_file(audit_path) : TokenUsage{});
  atomic_write(cfg.run_dir / "manifest.json", manifest.dump(2) + "\n");
  return res;
}

}  // namespace veritrace
