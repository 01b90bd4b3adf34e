#include "veritrace/config.hpp"

#include <cctype>
#include <cstdlib>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "veritrace/errors.hpp"
#include "veritrace/text.hpp"

namespace veritrace {

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::OpenAi: return "openai";
    case BackendKind::Scripted: return "scripted";
    case BackendKind::Exact: return "exact";
  }
  return "scripted";
}

json BackendSpec::to_json() const {
  json j = {{"role", role}, {"kind", to_string(kind)}};
  if (kind == BackendKind::OpenAi) {
    j["url"] = url;
    j["model"] = model;
    j["api_key_env"] = api_key_env;
    j["requests_per_minute"] = requests_per_minute;
    j["max_attempts"] = max_attempts;
    j["timeout_seconds"] = timeout_seconds;
  } else if (kind == BackendKind::Scripted) {
    j["script"] = script.generic_string();
  }
  return j;
}

namespace {

json opt_path(const std::optional<std::filesystem::path>& p) {
  return p ? json(p->generic_string()) : json(nullptr);
}

}  // namespace

json RunConfig::to_json() const {
  json backends_json = json::object();
  for (const auto& [role, spec] : backends) backends_json[role] = spec.to_json();
  json j = {
      {"seed", seed},
      {"prompts_dir", opt_path(prompts_dir)},
      {"inputs",
       {{"mcqs", opt_path(inputs.mcqs)},
        {"problems", opt_path(inputs.problems)},
        {"eval", opt_path(inputs.eval)},
        {"annotated", opt_path(inputs.annotated)},
        {"toy_bank", opt_path(inputs.toy_bank)},
        {"general", opt_path(inputs.general)},
        {"unconverted", opt_path(inputs.unconverted)}}},
      {"search", {{"max_depth", limits.max_depth}, {"max_attempts", limits.max_attempts}}},
      {"curation",
       {{"min_question_chars", curation.min_question_chars},
        {"judge_attempts", curation.judge_attempts},
        {"reformat_attempts", curation.reformat_attempts},
        {"reformat_temperature", curation.reformat_temperature}}},
      {"decontamination", {{"window", decontamination.window}, {"include_answers", decontamination.include_answers}}},
      {"recipe", recipe ? recipe->to_json() : json(nullptr)},
      {"synthesis",
       {{"merge_attempts", synthesis.merge_attempts},
        {"response_attempts", synthesis.response_attempts},
        {"temperature", synthesis.temperature},
        {"max_output_tokens", synthesis.max_output_tokens}}},
      {"ppo", ppo.to_json()},
      {"rl_iterations", rl_iterations},
      {"backend", backends_json},
  };
  return j;
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

const BackendSpec* RunConfig::backend(const std::string& role) const {
  auto it = backends.find(role);
  return it == backends.end() ? nullptr : &it->second;
}

std::vector<const BackendSpec*> RunConfig::probes() const {
  std::vector<const BackendSpec*> out;
  for (const auto& [role, spec] : backends) {
    if (role.rfind("probe.", 0) == 0) out.push_back(&spec);
  }
  return out;
}

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (v == nullptr) return std::nullopt;
  return std::string(v);
}

std::string interpolate_env(std::string_view s, const EnvLookup& env) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '$') {
      out += s[i];
      continue;
    }
    if (i + 1 < s.size() && s[i + 1] == '$') {
      out += '$';
      ++i;
      continue;
    }
    if (i + 1 < s.size() && s[i + 1] == '{') {
      const auto close = s.find('}', i + 2);
      if (close == std::string_view::npos) throw ConfigError("unterminated ${ in \"" + std::string(s) + "\"");
      const std::string name(s.substr(i + 2, close - i - 2));
      if (name.empty()) throw ConfigError("empty ${} in \"" + std::string(s) + "\"");
      const auto value = env(name);
      if (!value) throw ConfigError("environment variable " + name + " is not set");
      out += *value;
      i = close;
      continue;
    }
    out += '$';
  }
  return out;
}

namespace {

std::string where(const toml::node& n) {
  const auto& src = n.source();
  return "line " + std::to_string(src.begin.line);
}

class Reader {
 public:
  Reader(const toml::table& t, std::string path, const std::filesystem::path& base, const EnvLookup& env)
      : t_(t), path_(std::move(path)), base_(base), env_(env) {}

  /// Throws for keys outside `allowed`.
  void only(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : t_) {
      const std::string key(k.str());
      if (!allowed.count(key)) throw ConfigError("unknown key " + qualified(key) + " (" + where(v) + ")");
    }
  }

  std::optional<std::string> str(const std::string& key) const {
    const toml::node* n = t_.get(key);
    if (n == nullptr) return std::nullopt;
    const auto v = n->value<std::string>();
    if (!n->is_string() || !v) throw ConfigError(qualified(key) + " must be a string (" + where(*n) + ")");
    return interpolate_env(*v, env_);
  }

  std::optional<std::filesystem::path> path(const std::string& key) const {
    auto s = str(key);
    if (!s) return std::nullopt;
    std::filesystem::path p(*s);
    if (p.is_relative()) p = base_ / p;
    return p.lexically_normal();
  }

  template <class T>
  std::optional<T> integer(const std::string& key, T lo) const {
    const toml::node* n = t_.get(key);
    if (n == nullptr) return std::nullopt;
    if (!n->is_integer()) throw ConfigError(qualified(key) + " must be an integer (" + where(*n) + ")");
    const std::int64_t v = *n->value<std::int64_t>();
    if (v < static_cast<std::int64_t>(lo))
      throw ConfigError(qualified(key) + " must be >= " + std::to_string(lo) + " (" + where(*n) + ")");
    return static_cast<T>(v);
  }

  std::optional<double> number(const std::string& key) const {
    const toml::node* n = t_.get(key);
    if (n == nullptr) return std::nullopt;
    if (!n->is_number()) throw ConfigError(qualified(key) + " must be a number (" + where(*n) + ")");
    return *n->value<double>();
  }

  std::optional<bool> boolean(const std::string& key) const {
    const toml::node* n = t_.get(key);
    if (n == nullptr) return std::nullopt;
    if (!n->is_boolean()) throw ConfigError(qualified(key) + " must be true or false (" + where(*n) + ")");
    return *n->value<bool>();
  }

  const toml::table* table(const std::string& key) const {
    const toml::node* n = t_.get(key);
    if (n == nullptr) return nullptr;
    if (!n->is_table()) throw ConfigError(qualified(key) + " must be a table (" + where(*n) + ")");
    return n->as_table();
  }

  Reader sub(const toml::table& t, const std::string& key) const { return Reader(t, qualified(key), base_, env_); }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const toml::table& t_;
  std::string path_;
  std::filesystem::path base_;
  const EnvLookup& env_;
};

template <class T>
void assign(T& dst, const std::optional<T>& v) {
  if (v) dst = *v;
}

std::string default_key_env(const std::string& role) {
  std::string out = "VERITRACE_";
  for (char c : role) out += (c == '.' || c == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out + "_API_KEY";
}

BackendSpec parse_backend(const Reader& r, const std::string& role) {
  BackendSpec spec;
  spec.role = role;
  const auto kind = r.str("kind");
  if (!kind) throw ConfigError(r.qualified("kind") + " is required (openai, scripted or exact)");
  if (*kind == "openai") {
    spec.kind = BackendKind::OpenAi;
  } else if (*kind == "scripted") {
    spec.kind = BackendKind::Scripted;
  } else if (*kind == "exact") {
    if (role != "verifier") throw ConfigError(r.qualified("kind") + ": \"exact\" is only valid for the verifier role");
    spec.kind = BackendKind::Exact;
  } else {
    throw ConfigError(r.qualified("kind") + ": unknown backend kind \"" + *kind + "\"");
  }
  assign(spec.url, r.str("url"));
  assign(spec.model, r.str("model"));
  spec.api_key_env = r.str("api_key_env").value_or(default_key_env(role));
  if (auto s = r.path("script")) spec.script = *s;
  assign(spec.requests_per_minute, r.number("requests_per_minute"));
  assign(spec.max_attempts, r.integer<int>("max_attempts", 1));
  assign(spec.timeout_seconds, r.integer<int>("timeout_seconds", 1));
  if (spec.kind == BackendKind::OpenAi && (spec.url.empty() || spec.model.empty()))
    throw ConfigError("backend " + role + " needs url and model");
  if (spec.kind == BackendKind::Scripted && spec.script.empty())
    throw ConfigError("backend " + role + " needs a script path");
  return spec;
}

void check_no_secrets(const toml::table& t, const std::string& prefix) {
  static const std::set<std::string> kSecretKeys = {"api_key", "key", "token", "password", "secret", "authorization"};
  for (const auto& [k, v] : t) {
    const std::string key(k.str());
    if (kSecretKeys.count(key)) {
      throw ConfigError(prefix + key +
                        ": credentials are read from the environment only; name the variable with api_key_env");
    }
  }
}

}  // namespace

RunConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir, const EnvLookup& env) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config parse error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
  RunConfig cfg;
  const Reader top(root, "", base_dir, env);
  top.only({"seed", "run_dir", "prompts_dir", "inputs", "search", "curation", "decontamination", "recipe",
            "synthesis", "ppo", "backend"});
  assign(cfg.seed, top.integer<std::uint64_t>("seed", 0));
  if (auto p = top.path("run_dir")) cfg.run_dir = *p;
  cfg.prompts_dir = top.path("prompts_dir");

  if (const auto* t = top.table("inputs")) {
    const Reader r = top.sub(*t, "inputs");
    r.only({"mcqs", "problems", "eval", "annotated", "toy_bank", "general", "unconverted"});
    cfg.inputs.mcqs = r.path("mcqs");
    cfg.inputs.problems = r.path("problems");
    cfg.inputs.eval = r.path("eval");
    cfg.inputs.annotated = r.path("annotated");
    cfg.inputs.toy_bank = r.path("toy_bank");
    cfg.inputs.general = r.path("general");
    cfg.inputs.unconverted = r.path("unconverted");
  }
  if (const auto* t = top.table("search")) {
    const Reader r = top.sub(*t, "search");
    r.only({"max_depth", "max_attempts", "concurrency"});
    assign(cfg.limits.max_depth, r.integer<int>("max_depth", 1));
    assign(cfg.limits.max_attempts, r.integer<int>("max_attempts", 1));
    assign(cfg.search_concurrency, r.integer<std::size_t>("concurrency", 1));
  }
  if (const auto* t = top.table("curation")) {
    const Reader r = top.sub(*t, "curation");
    r.only({"min_question_chars", "judge_attempts", "reformat_attempts", "reformat_temperature", "concurrency"});
    assign(cfg.curation.min_question_chars, r.integer<std::size_t>("min_question_chars", 0));
    assign(cfg.curation.judge_attempts, r.integer<int>("judge_attempts", 1));
    assign(cfg.curation.reformat_attempts, r.integer<int>("reformat_attempts", 1));
    assign(cfg.curation.reformat_temperature, r.number("reformat_temperature"));
    assign(cfg.curation.concurrency, r.integer<std::size_t>("concurrency", 1));
  }
  if (const auto* t = top.table("decontamination")) {
    const Reader r = top.sub(*t, "decontamination");
    r.only({"window", "include_answers", "concurrency"});
    assign(cfg.decontamination.window, r.integer<std::size_t>("window", 8));
    assign(cfg.decontamination.include_answers, r.boolean("include_answers"));
    assign(cfg.decontamination.concurrency, r.integer<std::size_t>("concurrency", 1));
  }
  if (const auto* t = top.table("recipe")) {
    const Reader r = top.sub(*t, "recipe");
    r.only({"searched", "unconverted_mcq", "general_domain"});
    Recipe recipe;
    assign(recipe.searched, r.integer<std::size_t>("searched", 0));
    assign(recipe.unconverted_mcq, r.integer<std::size_t>("unconverted_mcq", 0));
    assign(recipe.general_domain, r.integer<std::size_t>("general_domain", 0));
    cfg.recipe = recipe;
  }
  if (const auto* t = top.table("synthesis")) {
    const Reader r = top.sub(*t, "synthesis");
    r.only({"merge_attempts", "response_attempts", "temperature", "max_output_tokens", "concurrency"});
    assign(cfg.synthesis.merge_attempts, r.integer<int>("merge_attempts", 1));
    assign(cfg.synthesis.response_attempts, r.integer<int>("response_attempts", 1));
    assign(cfg.synthesis.temperature, r.number("temperature"));
    assign(cfg.synthesis.max_output_tokens, r.integer<int>("max_output_tokens", 1));
    assign(cfg.synthesis.concurrency, r.integer<std::size_t>("concurrency", 1));
  }
  if (const auto* t = top.table("ppo")) {
    const Reader r = top.sub(*t, "ppo");
    r.only({"learning_rate", "batch_size", "beta", "ppo_epochs", "discount", "value_coef", "clip_range",
            "normalize_advantages", "iterations"});
    assign(cfg.ppo.learning_rate, r.number("learning_rate"));
    assign(cfg.ppo.batch_size, r.integer<std::size_t>("batch_size", 1));
    assign(cfg.ppo.beta, r.number("beta"));
    assign(cfg.ppo.ppo_epochs, r.integer<int>("ppo_epochs", 1));
    assign(cfg.ppo.discount, r.number("discount"));
    assign(cfg.ppo.value_coef, r.number("value_coef"));
    assign(cfg.ppo.clip_range, r.number("clip_range"));
    assign(cfg.ppo.normalize_advantages, r.boolean("normalize_advantages"));
    assign(cfg.rl_iterations, r.integer<int>("iterations", 0));
    try {
      cfg.ppo.validate();
    } catch (const ArgumentError& e) {
      throw ConfigError(std::string("ppo: ") + e.what());
    }
  }
  cfg.ppo.seed = cfg.seed;

  if (const auto* t = top.table("backend")) {
    const Reader r = top.sub(*t, "backend");
    for (const auto& [k, v] : *t) {
      const std::string role(k.str());
      if (!v.is_table()) throw ConfigError("backend." + role + " must be a table");
      const toml::table& bt = *v.as_table();
      if (role == "probe") {
        for (const auto& [pk, pv] : bt) {
          const std::string name(pk.str());
          if (!pv.is_table()) throw ConfigError("backend.probe." + name + " must be a table");
          check_no_secrets(*pv.as_table(), "backend.probe." + name + ".");
          const Reader pr = r.sub(bt, "probe").sub(*pv.as_table(), name);
          pr.only({"kind", "url", "model", "api_key_env", "script", "requests_per_minute", "max_attempts",
                   "timeout_seconds"});
          cfg.backends["probe." + name] = parse_backend(pr, "probe." + name);
        }
        continue;
      }
      if (role != "judge" && role != "generator" && role != "verifier")
        throw ConfigError("unknown backend role \"" + role + "\" (judge, generator, verifier or probe.<name>)");
      check_no_secrets(bt, "backend." + role + ".");
      const Reader br = r.sub(bt, role);
      br.only({"kind", "url", "model", "api_key_env", "script", "requests_per_minute", "max_attempts",
               "timeout_seconds"});
      cfg.backends[role] = parse_backend(br, role);
    }
  }
  try {
    cfg.limits.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("search: ") + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const EnvLookup& env) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse_config(text, std::filesystem::absolute(path).parent_path(), env);
}

std::vector<std::string> required_roles(std::string_view command, const RunConfig&) {
  if (command == "curate") return {"probe", "judge", "generator"};
  if (command == "search" || command == "synthesize") return {"generator", "verifier"};
  if (command == "verify-eval") return {"verifier"};
  return {};
}

void check_roles(std::string_view command, const RunConfig& cfg, const EnvLookup& env, bool dry_run) {
  std::vector<const BackendSpec*> used;
  for (const auto& role : required_roles(command, cfg)) {
    if (role == "probe") {
      const auto probes = cfg.probes();
      if (probes.empty()) throw ConfigError(std::string(command) + " needs at least one [backend.probe.<name>] table");
      used.insert(used.end(), probes.begin(), probes.end());
      continue;
    }
    const BackendSpec* spec = cfg.backend(role);
    if (spec == nullptr) throw ConfigError(std::string(command) + " needs a [backend." + role + "] table");
    used.push_back(spec);
  }
  if (command == "verify-eval" && cfg.backend("verifier")->kind == BackendKind::Exact)
    throw ConfigError("verify-eval needs an LLM verifier backend (openai or scripted) to compare against exact match");
  if (dry_run) return;
  for (const auto* spec : used) {
    if (spec->kind != BackendKind::OpenAi) continue;
    const auto key = env(spec->api_key_env);
    if (!key || key->empty())
      throw ConfigError("missing credential for backend " + spec->role + ": environment variable " +
                        spec->api_key_env + " is not set");
  }
}

// ---------------------------------------------------------------------------

BackendSet::BackendSet(const RunConfig& cfg, std::shared_ptr<AuditLog> audit, const EnvLookup& env,
                       std::optional<std::filesystem::path> dry_run_dir)
    : cfg_(cfg) {
  for (const auto& [role, spec] : cfg.backends) {
    if (spec.kind == BackendKind::Exact) continue;
    if (dry_run_dir) {
      backends_[role] = std::make_unique<DryRunBackend>(*dry_run_dir / role, role);
      continue;
    }
    if (spec.kind == BackendKind::Scripted) {
      backends_[role] = std::make_unique<ScriptedBackend>(load_script(spec.script), audit, role);
      continue;
    }
    OpenAiEndpoint endpoint{spec.url, env(spec.api_key_env).value_or(""), spec.model};
    RetryPolicy retry;
    retry.max_attempts = spec.max_attempts;
    backends_[role] = std::make_unique<OpenAiBackend>(
        endpoint, retry, std::make_shared<RateLimiter>(spec.requests_per_minute), audit,
        make_http_transport(std::chrono::seconds(spec.timeout_seconds)));
  }
}

ChatBackend& BackendSet::get(const std::string& role) const {
  auto it = backends_.find(role);
  if (it == backends_.end()) throw ConfigError("backend role " + role + " is not configured");
  return *it->second;
}

std::vector<NamedBackend> BackendSet::probes() const {
  std::vector<NamedBackend> out;
  for (const auto& [role, b] : backends_) {
    if (role.rfind("probe.", 0) == 0) out.push_back({role.substr(6), b.get()});
  }
  return out;
}

VerifierFn BackendSet::verifier(const PromptLibrary& prompts) const {
  const BackendSpec* spec = cfg_.backend("verifier");
  if (spec == nullptr) throw ConfigError("backend role verifier is not configured");
  if (spec->kind == BackendKind::Exact) return make_exact_verifier();
  return make_llm_verifier(get("verifier"), prompts);
}

std::map<std::string, std::string> BackendSet::identities() const {
  std::map<std::string, std::string> out;
  for (const auto& [role, b] : backends_) out[role] = b->identity();
  for (const auto& [role, spec] : cfg_.backends) {
    if (spec.kind == BackendKind::Exact) out[role] = "exact-match";
  }
  return out;
}

}  // namespace veritrace
