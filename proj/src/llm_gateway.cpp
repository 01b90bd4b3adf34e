#include "veritrace/llm_gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <thread>

#include "veritrace/errors.hpp"
#include "veritrace/text.hpp"

namespace veritrace {

std::string_view to_string(ChatRole role) {
  switch (role) {
    case ChatRole::System: return "system";
    case ChatRole::User: return "user";
    case ChatRole::Assistant: return "assistant";
  }
  return "user";
}

std::string_view to_string(FinishReason finish) {
  switch (finish) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::Error: return "error";
  }
  return "error";
}

ChatRequest ChatRequest::user(std::string content, std::string tag, double temperature) {
  ChatRequest r;
  r.messages.push_back({ChatRole::User, std::move(content)});
  r.tag = std::move(tag);
  r.temperature = temperature;
  return r;
}

void ChatRequest::validate() const {
  if (messages.empty() || messages.back().role != ChatRole::User) {
    throw ArgumentError("chat request must end with a user message (tag " + tag + ")");
  }
  if (!(temperature >= 0.0)) throw ArgumentError("temperature must be >= 0");
  if (max_output_tokens <= 0) throw ArgumentError("max_output_tokens must be positive");
}

const std::string& ChatRequest::last_user_content() const {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == ChatRole::User) return it->content;
  }
  static const std::string empty;
  return empty;
}

std::string ChatRequest::hash() const {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  const json j{{"messages", msgs}, {"temperature", temperature}, {"max_tokens", max_output_tokens}};
  return sha256_hex(dump_line(j));
}

// ---------------------------------------------------------------------------
// AuditLog

AuditLog::AuditLog(std::filesystem::path path) : path_(std::move(path)) {}

json AuditLog::to_json(const AuditEntry& e, bool with_timestamp) {
  json j{{"backend", e.backend},
         {"tag", e.tag},
         {"request_hash", e.request_hash},
         {"attempt", e.attempt},
         {"http_status", e.http_status},
         {"finish", to_string(e.finish)},
         {"prompt", e.prompt_excerpt},
         {"reply", e.reply_excerpt},
         {"prompt_tokens", e.usage.prompt_tokens},
         {"output_tokens", e.usage.output_tokens},
         {"latency_ms", e.latency_ms}};
  if (!e.error.empty()) j["error"] = e.error;
  if (with_timestamp) j["ts"] = utc_timestamp();
  return j;
}

void AuditLog::record(const AuditEntry& entry) {
  std::lock_guard lock(mutex_);
  entries_.push_back(entry);
  totals_ += entry.usage;
  if (path_) append_line(*path_, dump_line(to_json(entry)));
}

std::vector<AuditEntry> AuditLog::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

TokenUsage AuditLog::totals() const {
  std::lock_guard lock(mutex_);
  return totals_;
}

std::size_t AuditLog::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

TokenUsage AuditLog::sum_file(const std::filesystem::path& path) {
  TokenUsage total;
  if (!std::filesystem::exists(path)) return total;
  for (const auto& line : read_jsonl(path)) {
    if (!line.error.empty()) throw IoError("corrupt audit line " + std::to_string(line.line_no));
    total.prompt_tokens += line.value.value("prompt_tokens", std::int64_t{0});
    total.output_tokens += line.value.value("output_tokens", std::int64_t{0});
  }
  return total;
}

// ---------------------------------------------------------------------------
// RateLimiter

RateLimiter::RateLimiter(double requests_per_minute, NowFn now, SleepFn sleep)
    : rate_per_second_(requests_per_minute / 60.0),
      capacity_(std::max(1.0, requests_per_minute)),
      tokens_(std::max(1.0, requests_per_minute)),
      now_(now ? std::move(now) : NowFn([] { return Clock::now(); })),
      sleep_(sleep ? std::move(sleep) : SleepFn([](Clock::duration d) { std::this_thread::sleep_for(d); })) {
  last_ = now_();
}

void RateLimiter::acquire() {
  if (rate_per_second_ <= 0.0) return;
  for (;;) {
    Clock::duration wait{};
    {
      std::lock_guard lock(mutex_);
      const auto now = now_();
      const double elapsed = std::chrono::duration<double>(now - last_).count();
      last_ = now;
      tokens_ = std::min(capacity_, tokens_ + elapsed * rate_per_second_);
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait = std::chrono::duration_cast<Clock::duration>(
          std::chrono::duration<double>((1.0 - tokens_) / rate_per_second_));
    }
    sleep_(wait);
  }
}

std::chrono::milliseconds RetryPolicy::backoff_for(int failed_attempts) const {
  double ms = static_cast<double>(initial_backoff.count());
  for (int i = 1; i < failed_attempts; ++i) ms *= multiplier;
  return std::chrono::milliseconds(
      static_cast<std::int64_t>(std::min(ms, static_cast<double>(max_backoff.count()))));
}

// ---------------------------------------------------------------------------
// HTTP

HttpTransport make_http_transport(std::chrono::seconds timeout) {
  return [timeout](const std::string& url, const std::string& api_key, const std::string& body) {
    HttpResponse out;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
      out.transport_error = "endpoint URL lacks a scheme: " + url;
      return out;
    }
    const auto path_begin = url.find('/', scheme_end + 3);
    const std::string origin = path_begin == std::string::npos ? url : url.substr(0, path_begin);
    const std::string path = path_begin == std::string::npos ? "/" : url.substr(path_begin);
    httplib::Client client(origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      out.transport_error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  };
}

std::string OpenAiEndpoint::completions_url() const {
  std::string base = url;
  while (!base.empty() && base.back() == '/') base.pop_back();
  if (base.find("/chat/completions") != std::string::npos) return base;
  if (base.size() >= 3 && base.compare(base.size() - 3, 3, "/v1") == 0) return base + "/chat/completions";
  return base + "/v1/chat/completions";
}

OpenAiBackend::OpenAiBackend(OpenAiEndpoint endpoint, RetryPolicy retry, std::shared_ptr<RateLimiter> limiter,
                             std::shared_ptr<AuditLog> audit, HttpTransport transport, SleepFn sleep)
    : endpoint_(std::move(endpoint)),
      retry_(retry),
      limiter_(std::move(limiter)),
      audit_(std::move(audit)),
      transport_(std::move(transport)),
      sleep_(sleep ? std::move(sleep) : SleepFn([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })) {
  if (retry_.max_attempts < 1) throw ArgumentError("retry max_attempts must be >= 1");
}

std::string OpenAiBackend::identity() const { return "openai:" + endpoint_.model + "@" + endpoint_.completions_url(); }

json OpenAiBackend::request_body(const std::string& model, const ChatRequest& request) {
  json msgs = json::array();
  for (const auto& m : request.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return json{{"model", model},
              {"messages", msgs},
              {"temperature", request.temperature},
              {"max_tokens", request.max_output_tokens}};
}

ChatReply OpenAiBackend::parse_response(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    return ChatReply::failure(std::string("response is not JSON: ") + e.what());
  }
  try {
    const auto& choice = j.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    ChatReply r;
    r.content = content.is_string() ? content.get<std::string>() : std::string();
    const auto finish = choice.value("finish_reason", std::string("stop"));
    r.finish = finish == "length" ? FinishReason::Length : FinishReason::Stop;
    if (r.finish == FinishReason::Length && r.content.empty()) {
      return ChatReply::failure("finish_reason=length with empty content");
    }
    if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
      r.usage.prompt_tokens = u->value("prompt_tokens", std::int64_t{0});
      r.usage.output_tokens = u->value("completion_tokens", std::int64_t{0});
    }
    return r;
  } catch (const json::exception& e) {
    return ChatReply::failure(std::string("unexpected response shape: ") + e.what());
  }
}

ChatReply OpenAiBackend::complete(const ChatRequest& request) {
  request.validate();
  const std::string body = dump_line(request_body(endpoint_.model, request));
  const std::string url = endpoint_.completions_url();
  const std::string request_hash = request.hash();
  std::string last_error;
  for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
    if (limiter_) limiter_->acquire();
    const auto t0 = std::chrono::steady_clock::now();
    HttpResponse resp = transport_(url, endpoint_.api_key, body);
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);

    ChatReply reply;
    bool retryable = false;
    if (!resp.transport_error.empty()) {
      reply = ChatReply::failure("transport: " + resp.transport_error);
      retryable = true;
    } else if (resp.status == 429 || resp.status >= 500) {
      reply = ChatReply::failure("HTTP " + std::to_string(resp.status));
      retryable = true;
    } else if (resp.status < 200 || resp.status >= 300) {
      reply = ChatReply::failure("HTTP " + std::to_string(resp.status) + ": " + text::truncate(resp.body, 200));
    } else {
      reply = parse_response(resp.body);
    }
    reply.latency_ms = latency.count();

    if (audit_) {
      AuditEntry e;
      e.backend = identity();
      e.tag = request.tag;
      e.request_hash = request_hash;
      e.attempt = attempt;
      e.http_status = resp.status;
      e.finish = reply.finish;
      e.prompt_excerpt = text::truncate(request.last_user_content(), AuditLog::kExcerptBytes);
      e.reply_excerpt = text::truncate(reply.content, AuditLog::kExcerptBytes);
      e.error = reply.error;
      e.usage = reply.usage;
      e.latency_ms = reply.latency_ms;
      audit_->record(e);
    }

    if (!retryable) return reply;
    last_error = reply.error;
    if (attempt < retry_.max_attempts) sleep_(retry_.backoff_for(attempt));
  }
  return ChatReply::failure("retries exhausted after " + std::to_string(retry_.max_attempts) +
                            " attempts; last error: " + last_error);
}

// ---------------------------------------------------------------------------
// Scripted backend

ScriptEntry ScriptEntry::always(std::string tag_pattern, std::string reply,
                                std::optional<std::string> content_pattern) {
  ScriptEntry e;
  e.tag_pattern = std::move(tag_pattern);
  e.content_pattern = std::move(content_pattern);
  e.replies.push_back(ScriptReply{std::move(reply), FinishReason::Stop, {}});
  e.repeat = true;
  return e;
}

ScriptEntry ScriptEntry::sequence(std::string tag_pattern, std::vector<std::string> replies,
                                  std::optional<std::string> content_pattern) {
  ScriptEntry e;
  e.tag_pattern = std::move(tag_pattern);
  e.content_pattern = std::move(content_pattern);
  for (auto& r : replies) e.replies.push_back(ScriptReply{std::move(r), FinishReason::Stop, {}});
  e.repeat = false;
  return e;
}

namespace {

ScriptReply script_reply_from_json(const json& j) {
  ScriptReply r;
  if (j.is_string()) {
    r.content = j.get<std::string>();
    return r;
  }
  if (!j.is_object()) throw ArgumentError("script reply must be a string or object");
  if (j.contains("error")) {
    r.finish = FinishReason::Error;
    r.error = j.at("error").get<std::string>();
    return r;
  }
  r.content = j.value("content", std::string());
  if (j.value("finish", std::string("stop")) == "length") r.finish = FinishReason::Length;
  return r;
}

json script_reply_to_json(const ScriptReply& r) {
  if (r.finish == FinishReason::Error) return json{{"error", r.error}};
  if (r.finish == FinishReason::Length) return json{{"content", r.content}, {"finish", "length"}};
  return r.content;
}

std::int64_t whitespace_tokens(std::string_view s) {
  return static_cast<std::int64_t>(text::split_whitespace(s).size());
}

}  // namespace

std::vector<ScriptEntry> load_script(const std::filesystem::path& path) {
  std::vector<ScriptEntry> out;
  for (const auto& line : read_jsonl(path)) {
    const std::string where = path.string() + ":" + std::to_string(line.line_no);
    if (!line.error.empty()) throw IoError(where + ": " + line.error);
    const json& j = line.value;
    try {
      ScriptEntry e;
      e.tag_pattern = j.value("tag", std::string(".*"));
      if (j.contains("content") && !j["content"].is_null()) e.content_pattern = j["content"].get<std::string>();
      if (j.contains("reply")) {
        e.replies.push_back(script_reply_from_json(j["reply"]));
        e.repeat = true;
      } else if (j.contains("replies")) {
        for (const auto& r : j["replies"]) e.replies.push_back(script_reply_from_json(r));
        e.repeat = false;
      } else {
        throw ArgumentError("entry needs \"reply\" or \"replies\"");
      }
      out.push_back(std::move(e));
    } catch (const std::exception& e) {
      throw IoError(where + ": " + e.what());
    }
  }
  return out;
}

json to_json(const ScriptEntry& entry) {
  json j{{"tag", entry.tag_pattern}};
  if (entry.content_pattern) j["content"] = *entry.content_pattern;
  if (entry.repeat && entry.replies.size() == 1) {
    j["reply"] = script_reply_to_json(entry.replies.front());
  } else {
    json arr = json::array();
    for (const auto& r : entry.replies) arr.push_back(script_reply_to_json(r));
    j["replies"] = arr;
  }
  return j;
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptEntry> entries, std::shared_ptr<AuditLog> audit, std::string name)
    : name_(std::move(name)), audit_(std::move(audit)) {
  for (auto& e : entries) {
    Compiled c{e, std::regex(e.tag_pattern), std::nullopt, 0};
    if (e.content_pattern) c.content = std::regex(*e.content_pattern);
    entries_.push_back(std::move(c));
  }
}

ChatReply ScriptedBackend::complete(const ChatRequest& request) {
  request.validate();
  ChatReply reply;
  {
    std::lock_guard lock(mutex_);
    requests_.push_back(request);
    const std::string& content = request.last_user_content();
    bool matched_any = false;
    bool answered = false;
    for (auto& c : entries_) {
      if (!std::regex_match(request.tag, c.tag)) continue;
      if (c.content && !std::regex_search(content, *c.content)) continue;
      matched_any = true;
      if (!c.entry.repeat && c.cursor >= c.entry.replies.size()) continue;
      const ScriptReply& r = c.entry.repeat ? c.entry.replies.front() : c.entry.replies[c.cursor++];
      if (r.finish == FinishReason::Error) {
        reply = ChatReply::failure(r.error);
      } else {
        reply.content = r.content;
        reply.finish = r.finish;
      }
      answered = true;
      break;
    }
    if (!answered) {
      reply = ChatReply::failure(matched_any ? "script exhausted for tag \"" + request.tag + "\""
                                             : "no script entry matches tag \"" + request.tag + "\"");
    }
    reply.usage.prompt_tokens = whitespace_tokens(content);
    reply.usage.output_tokens = whitespace_tokens(reply.content);
  }
  if (audit_) {
    AuditEntry e;
    e.backend = identity();
    e.tag = request.tag;
    e.request_hash = request.hash();
    e.finish = reply.finish;
    e.prompt_excerpt = text::truncate(request.last_user_content(), AuditLog::kExcerptBytes);
    e.reply_excerpt = text::truncate(reply.content, AuditLog::kExcerptBytes);
    e.error = reply.error;
    e.usage = reply.usage;
    audit_->record(e);
  }
  return reply;
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard lock(mutex_);
  return requests_.size();
}

std::vector<ChatRequest> ScriptedBackend::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

// ---------------------------------------------------------------------------

DryRunBackend::DryRunBackend(std::filesystem::path out_dir, std::string role)
    : out_dir_(std::move(out_dir)), role_(std::move(role)) {}

ChatReply DryRunBackend::complete(const ChatRequest& request) {
  request.validate();
  std::size_t n;
  {
    std::lock_guard lock(mutex_);
    n = ++count_;
  }
  char stem[32];
  std::snprintf(stem, sizeof stem, "%04zu", n);
  atomic_write(out_dir_ / (role_ + "_" + stem + "_" + encode_file_stem(request.tag) + ".txt"),
               request.last_user_content());
  return ChatReply::failure("dry run: no backend call made");
}

std::size_t DryRunBackend::calls() const {
  std::lock_guard lock(mutex_);
  return count_;
}

}  // namespace veritrace
