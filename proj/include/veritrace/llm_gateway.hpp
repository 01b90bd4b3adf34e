#pragma once

// Chat-completion access for every stage: a common backend interface, an
// OpenAI-compatible HTTP backend with retries and a shared rate limiter, a
// deterministic scripted backend for tests and offline runs, and a JSON-lines
// audit log of every call.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "veritrace/io.hpp"

namespace veritrace {

enum class ChatRole { System, User, Assistant };

std::string_view to_string(ChatRole role);

struct ChatMessage {
  ChatRole role = ChatRole::User;
  std::string content;
};

inline constexpr double kJudgeTemperature = 0.0;
inline constexpr double kGenerativeTemperature = 0.7;

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = kGenerativeTemperature;
  int max_output_tokens = 4096;
  std::string tag;  // free-form, used for logging and script matching

  /// Single user-turn request.
  static ChatRequest user(std::string content, std::string tag, double temperature = kGenerativeTemperature);

  /// Throws ArgumentError unless the last message is a user turn, the
  /// temperature is >= 0 and max_output_tokens is positive.
  void validate() const;

  const std::string& last_user_content() const;

  /// SHA-256 of the canonical request JSON.
  std::string hash() const;
};

enum class FinishReason { Stop, Length, Error };

std::string_view to_string(FinishReason finish);

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t output_tokens = 0;

  TokenUsage& operator+=(const TokenUsage& o) {
    prompt_tokens += o.prompt_tokens;
    output_tokens += o.output_tokens;
    return *this;
  }
  bool operator==(const TokenUsage&) const = default;
};

struct ChatReply {
  std::string content;
  FinishReason finish = FinishReason::Stop;
  TokenUsage usage;
  std::int64_t latency_ms = 0;
  std::string error;  // set when finish == Error

  bool ok() const { return finish != FinishReason::Error; }

  static ChatReply failure(std::string message) {
    ChatReply r;
    r.finish = FinishReason::Error;
    r.error = std::move(message);
    return r;
  }
};

// ---------------------------------------------------------------------------

struct AuditEntry {
  std::string backend;
  std::string tag;
  std::string request_hash;
  int attempt = 1;
  int http_status = 0;  // 0 for non-HTTP backends
  FinishReason finish = FinishReason::Stop;
  std::string prompt_excerpt;
  std::string reply_excerpt;
  std::string error;
  TokenUsage usage;
  std::int64_t latency_ms = 0;
};

/// Thread-safe JSON-lines log of every backend call (one entry per HTTP
/// attempt). Keeps running token totals for the run manifest.
class AuditLog {
 public:
  AuditLog() = default;
  /// Appends to `path`; the file is created on first write.
  explicit AuditLog(std::filesystem::path path);

  void record(const AuditEntry& entry);

  std::vector<AuditEntry> entries() const;
  TokenUsage totals() const;
  std::size_t size() const;

  static json to_json(const AuditEntry& e, bool with_timestamp = true);

  /// Token totals recomputed from an audit file.
  static TokenUsage sum_file(const std::filesystem::path& path);

  static constexpr std::size_t kExcerptBytes = 240;

 private:
  mutable std::mutex mutex_;
  std::optional<std::filesystem::path> path_;
  std::vector<AuditEntry> entries_;
  TokenUsage totals_;
};

// ---------------------------------------------------------------------------

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;

  /// Never throws for transport or model failures; those come back as
  /// finish == Error. Throws ArgumentError for malformed requests.
  virtual ChatReply complete(const ChatRequest& request) = 0;

  /// Human-readable identity for manifests and logs.
  virtual std::string identity() const = 0;
};

struct NamedBackend {
  std::string name;
  ChatBackend* backend = nullptr;
};

// ---------------------------------------------------------------------------

/// Token bucket shared by every caller of one backend. Capacity equals the
/// per-minute budget; tokens refill continuously.
class RateLimiter {
 public:
  using Clock = std::chrono::steady_clock;
  using NowFn = std::function<Clock::time_point()>;
  using SleepFn = std::function<void(Clock::duration)>;

  /// requests_per_minute <= 0 disables limiting.
  explicit RateLimiter(double requests_per_minute, NowFn now = {}, SleepFn sleep = {});

  /// Blocks until a token is available. The internal lock is never held
  /// while sleeping.
  void acquire();

 private:
  double rate_per_second_;
  double capacity_;
  double tokens_;
  Clock::time_point last_;
  NowFn now_;
  SleepFn sleep_;
  std::mutex mutex_;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{16000};

  std::chrono::milliseconds backoff_for(int failed_attempts) const;
};

struct HttpResponse {
  int status = 0;
  std::string body;
  std::string transport_error;  // non-empty when no HTTP response arrived
};

/// POST `body` to `url` with bearer `api_key`.
using HttpTransport =
    std::function<HttpResponse(const std::string& url, const std::string& api_key, const std::string& body)>;

/// cpp-httplib transport (http and https).
HttpTransport make_http_transport(std::chrono::seconds timeout = std::chrono::seconds(120));

struct OpenAiEndpoint {
  std::string url;  // base URL or full .../chat/completions URL
  std::string api_key;
  std::string model;

  /// Full chat-completions URL.
  std::string completions_url() const;
};

/// OpenAI-compatible `/v1/chat/completions` client. Transport errors, 5xx and
/// 429 are retried with exponential backoff; other 4xx fail immediately.
class OpenAiBackend : public ChatBackend {
 public:
  using SleepFn = std::function<void(std::chrono::milliseconds)>;

  OpenAiBackend(OpenAiEndpoint endpoint, RetryPolicy retry, std::shared_ptr<RateLimiter> limiter,
                std::shared_ptr<AuditLog> audit, HttpTransport transport = make_http_transport(),
                SleepFn sleep = {});

  ChatReply complete(const ChatRequest& request) override;
  std::string identity() const override;

  static json request_body(const std::string& model, const ChatRequest& request);
  /// Parses a 200 response body; returns an Error reply when the body does
  /// not carry choices[0].message.content.
  static ChatReply parse_response(const std::string& body);

 private:
  OpenAiEndpoint endpoint_;
  RetryPolicy retry_;
  std::shared_ptr<RateLimiter> limiter_;
  std::shared_ptr<AuditLog> audit_;
  HttpTransport transport_;
  SleepFn sleep_;
};

// ---------------------------------------------------------------------------

struct ScriptReply {
  std::string content;
  FinishReason finish = FinishReason::Stop;
  std::string error;  // non-empty: simulate a backend failure
};

/// One scripted rule. `tag_pattern` must match the whole request tag;
/// `content_pattern`, when present, must occur somewhere in the last user
/// message. A single reply is reused indefinitely; a sequence is consumed in
/// order and then exhausted.
struct ScriptEntry {
  std::string tag_pattern = ".*";
  std::optional<std::string> content_pattern;
  std::vector<ScriptReply> replies;
  bool repeat = false;

  static ScriptEntry always(std::string tag_pattern, std::string reply,
                            std::optional<std::string> content_pattern = std::nullopt);
  static ScriptEntry sequence(std::string tag_pattern, std::vector<std::string> replies,
                              std::optional<std::string> content_pattern = std::nullopt);
};

/// Script file: JSON-lines of
///   {"tag": regex, "content": regex?, "reply": text}
///   {"tag": regex, "content": regex?, "replies": [text | {"content","finish"} | {"error"}]}
std::vector<ScriptEntry> load_script(const std::filesystem::path& path);
json to_json(const ScriptEntry& entry);

/// Deterministic backend: entries are tried in order and the first matching
/// entry with replies left answers. Usage counts are whitespace token counts.
class ScriptedBackend : public ChatBackend {
 public:
  explicit ScriptedBackend(std::vector<ScriptEntry> entries, std::shared_ptr<AuditLog> audit = nullptr,
                           std::string name = "scripted");

  ChatReply complete(const ChatRequest& request) override;
  std::string identity() const override { return "scripted:" + name_; }

  std::size_t calls() const;
  std::vector<ChatRequest> requests() const;

 private:
  struct Compiled {
    ScriptEntry entry;
    std::regex tag;
    std::optional<std::regex> content;
    std::size_t cursor = 0;
  };
  std::string name_;
  std::vector<Compiled> entries_;
  std::shared_ptr<AuditLog> audit_;
  mutable std::mutex mutex_;
  std::vector<ChatRequest> requests_;
};

/// Records every request and answers with an Error reply. Used by --dry-run
/// to render prompts without calling a model.
class DryRunBackend : public ChatBackend {
 public:
  explicit DryRunBackend(std::filesystem::path out_dir, std::string role);

  ChatReply complete(const ChatRequest& request) override;
  std::string identity() const override { return "dry-run:" + role_; }

  std::size_t calls() const;

 private:
  std::filesystem::path out_dir_;
  std::string role_;
  mutable std::mutex mutex_;
  std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------

enum class JsonSource { FencedJson, FencedAny, BalancedBraces };

struct ExtractedJson {
  json value;
  std::size_t begin = 0;  // byte offsets of the parsed span in the input
  std::size_t end = 0;
  JsonSource source = JsonSource::BalancedBraces;
};

class ExtractionError : public std::runtime_error {
 public:
  explicit ExtractionError(std::string raw)
      : std::runtime_error("no parseable JSON object in model reply"), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

/// Pulls a JSON value out of a model reply. Candidates in order: fenced
/// blocks tagged json, any fenced block, then balanced {...} spans from left
/// to right. The first candidate that parses wins.
ExtractedJson extract_json(std::string_view reply);

}  // namespace veritrace
