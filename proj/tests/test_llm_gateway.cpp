#include <gtest/gtest.h>

#include <httplib.h>

#include <thread>

#include "testkit.hpp"
#include "veritrace/errors.hpp"
#include "veritrace/llm_gateway.hpp"

using namespace veritrace;
using namespace std::chrono_literals;

namespace {

std::string ok_body(const std::string& content, int prompt = 11, int completion = 3) {
  return json({{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", "stop"}}}},
               {"usage", {{"prompt_tokens", prompt}, {"completion_tokens", completion}}}})
      .dump();
}

struct FakeTransport {
  std::vector<HttpResponse> responses;
  std::size_t calls = 0;
  std::string last_body;
  std::string last_key;

  HttpTransport fn() {
    return [this](const std::string&, const std::string& key, const std::string& body) {
      last_body = body;
      last_key = key;
      return responses.at(std::min(calls++, responses.size() - 1));
    };
  }
};

}  // namespace

TEST(ChatRequest, ValidatesShape) {
  auto r = ChatRequest::user("hi", "t");
  EXPECT_NO_THROW(r.validate());
  r.temperature = -1;
  EXPECT_THROW(r.validate(), ArgumentError);
  ChatRequest empty;
  EXPECT_THROW(empty.validate(), ArgumentError);
  EXPECT_EQ(ChatRequest::user("a", "t").hash(), ChatRequest::user("a", "t").hash());
  EXPECT_NE(ChatRequest::user("a", "t").hash(), ChatRequest::user("b", "t").hash());
}

TEST(RetryPolicy, ExponentialAndCapped) {
  RetryPolicy p;
  EXPECT_EQ(p.backoff_for(1), 500ms);
  EXPECT_EQ(p.backoff_for(2), 1000ms);
  EXPECT_EQ(p.backoff_for(3), 2000ms);
  EXPECT_EQ(p.backoff_for(10), 16000ms);
}

TEST(OpenAiBackend, RetriesServerErrorsAndRateLimits) {
  FakeTransport t;
  t.responses = {{500, "oops", ""}, {429, "slow down", ""}, {0, "", "connection refused"}, {200, ok_body("fine"), ""}};
  std::vector<std::chrono::milliseconds> sleeps;
  auto audit = std::make_shared<AuditLog>();
  OpenAiBackend b({"https://api.example.com/v1", "sk-test", "m"}, RetryPolicy{}, nullptr, audit, t.fn(),
                  [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  const auto reply = b.complete(ChatRequest::user("question", "probe:x", 0.0));
  ASSERT_TRUE(reply.ok());
  EXPECT_EQ(reply.content, "fine");
  EXPECT_EQ(t.calls, 4u);
  EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{500ms, 1000ms, 2000ms}));
  EXPECT_EQ(audit->size(), 4u);
  EXPECT_EQ(audit->totals(), (TokenUsage{11, 3}));
  EXPECT_EQ(t.last_key, "sk-test");
  const auto body = json::parse(t.last_body);
  EXPECT_EQ(body["model"], "m");
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["messages"][0]["role"], "user");
}

TEST(OpenAiBackend, ClientErrorsAreNotRetried) {
  FakeTransport t;
  t.responses = {{400, "{\"error\":\"bad\"}", ""}};
  OpenAiBackend b({"https://api.example.com", "k", "m"}, RetryPolicy{}, nullptr, nullptr, t.fn(), [](auto) {});
  const auto reply = b.complete(ChatRequest::user("q", "t"));
  EXPECT_FALSE(reply.ok());
  EXPECT_EQ(t.calls, 1u);
  EXPECT_NE(reply.error.find("HTTP 400"), std::string::npos);
}

TEST(OpenAiBackend, GivesUpAfterMaxAttempts) {
  FakeTransport t;
  t.responses = {{503, "", ""}};
  RetryPolicy p;
  p.max_attempts = 3;
  OpenAiBackend b({"https://api.example.com", "k", "m"}, p, nullptr, nullptr, t.fn(), [](auto) {});
  const auto reply = b.complete(ChatRequest::user("q", "t"));
  EXPECT_FALSE(reply.ok());
  EXPECT_EQ(t.calls, 3u);
}

TEST(OpenAiBackend, ParseResponseShapes) {
  EXPECT_EQ(OpenAiBackend::parse_response(ok_body("x")).content, "x");
  EXPECT_FALSE(OpenAiBackend::parse_response("not json").ok());
  EXPECT_FALSE(OpenAiBackend::parse_response("{\"choices\":[]}").ok());
  const auto truncated = OpenAiBackend::parse_response(
      json({{"choices", {{{"message", {{"content", "partial"}}}, {"finish_reason", "length"}}}}}).dump());
  EXPECT_EQ(truncated.finish, FinishReason::Length);
}

TEST(OpenAiBackend, CompletionsUrl) {
  EXPECT_EQ((OpenAiEndpoint{"https://h/v1", "", ""}).completions_url(), "https://h/v1/chat/completions");
  EXPECT_EQ((OpenAiEndpoint{"https://h/v1/", "", ""}).completions_url(), "https://h/v1/chat/completions");
  EXPECT_EQ((OpenAiEndpoint{"https://h/v1/chat/completions", "", ""}).completions_url(),
            "https://h/v1/chat/completions");
}

TEST(OpenAiBackend, TalksToLocalHttpServer) {
  httplib::Server server;
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    const auto body = json::parse(req.body);
    res.set_content(ok_body("echo: " + body["messages"][0]["content"].get<std::string>()), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  OpenAiBackend b({"http://127.0.0.1:" + std::to_string(port) + "/v1", "sk-local", "m"}, RetryPolicy{}, nullptr,
                  nullptr, make_http_transport(5s));
  const auto reply = b.complete(ChatRequest::user("ping", "t"));
  server.stop();
  th.join();
  ASSERT_TRUE(reply.ok()) << reply.error;
  EXPECT_EQ(reply.content, "echo: ping");
  EXPECT_EQ(seen_auth, "Bearer sk-local");
}

TEST(RateLimiter, SleepsWhenBucketIsEmpty) {
  auto now = RateLimiter::Clock::time_point{};
  std::vector<double> slept;
  RateLimiter limiter(
      60.0, [&] { return now; },
      [&](RateLimiter::Clock::duration d) {
        slept.push_back(std::chrono::duration<double>(d).count());
        now += d;
      });
  for (int i = 0; i < 60; ++i) limiter.acquire();
  EXPECT_TRUE(slept.empty());
  limiter.acquire();
  ASSERT_EQ(slept.size(), 1u);
  EXPECT_NEAR(slept[0], 1.0, 1e-6);
}

TEST(RateLimiter, DisabledWhenNonPositive) {
  RateLimiter limiter(0.0, {}, [](auto) { FAIL() << "should not sleep"; });
  for (int i = 0; i < 1000; ++i) limiter.acquire();
}

TEST(ScriptedBackend, MatchesTagAndContentInOrder) {
  ScriptedBackend b({ScriptEntry::always("filter", "Too Simple", "aspirin"), ScriptEntry::always("filter", "Pass"),
                     ScriptEntry::sequence("probe:.*", {"A", "B"})});
  EXPECT_EQ(b.complete(ChatRequest::user("about aspirin", "filter")).content, "Too Simple");
  EXPECT_EQ(b.complete(ChatRequest::user("about statins", "filter")).content, "Pass");
  EXPECT_EQ(b.complete(ChatRequest::user("q", "probe:one")).content, "A");
  EXPECT_EQ(b.complete(ChatRequest::user("q", "probe:two")).content, "B");
  const auto exhausted = b.complete(ChatRequest::user("q", "probe:one"));
  EXPECT_FALSE(exhausted.ok());
  EXPECT_NE(exhausted.error.find("exhausted"), std::string::npos);
  EXPECT_FALSE(b.complete(ChatRequest::user("q", "nothing")).ok());
  EXPECT_EQ(b.calls(), 6u);
}

TEST(ScriptedBackend, LoadsScriptFileWithErrorsAndFinishReasons) {
  const auto dir = testkit::temp_dir("script");
  atomic_write(dir / "s.jsonl",
               "{\"tag\":\"a\",\"replies\":[\"one\",{\"content\":\"cut\",\"finish\":\"length\"},{\"error\":\"down\"}]}\n"
               "{\"tag\":\"b\",\"content\":\"x+\",\"reply\":\"bee\"}\n");
  auto audit = std::make_shared<AuditLog>(dir / "audit.jsonl");
  ScriptedBackend b(load_script(dir / "s.jsonl"), audit);
  EXPECT_EQ(b.complete(ChatRequest::user("q", "a")).content, "one");
  EXPECT_EQ(b.complete(ChatRequest::user("q", "a")).finish, FinishReason::Length);
  EXPECT_EQ(b.complete(ChatRequest::user("q", "a")).error, "down");
  EXPECT_EQ(b.complete(ChatRequest::user("axxb", "b")).content, "bee");
  EXPECT_EQ(AuditLog::sum_file(dir / "audit.jsonl"), audit->totals());
  EXPECT_EQ(read_jsonl(dir / "audit.jsonl").size(), 4u);
}

TEST(ScriptedBackend, RejectsBadScript) {
  const auto dir = testkit::temp_dir("badscript");
  atomic_write(dir / "s.jsonl", "{\"tag\":\"a\"}\n");
  EXPECT_THROW(load_script(dir / "s.jsonl"), IoError);
}

TEST(DryRunBackend, WritesPromptsAndFails) {
  const auto dir = testkit::temp_dir("dry");
  DryRunBackend b(dir, "judge");
  EXPECT_FALSE(b.complete(ChatRequest::user("render me", "filter")).ok());
  EXPECT_EQ(b.calls(), 1u);
  EXPECT_EQ(testkit::slurp(dir / "judge_0001_filter.txt"), "render me");
}

// extract_json over fifteen reply shapes
TEST(ExtractJson, FencedJsonWins) {
  const auto r = extract_json("Sure!\n```json\n{\"a\": 1}\n```\nDone {\"b\":2}");
  EXPECT_EQ(r.source, JsonSource::FencedJson);
  EXPECT_EQ(r.value["a"], 1);
}
TEST(ExtractJson, UppercaseInfoString) { EXPECT_EQ(extract_json("```JSON\n{\"a\":1}\n```").source, JsonSource::FencedJson); }
TEST(ExtractJson, UntaggedFence) { EXPECT_EQ(extract_json("```\n{\"a\":1}\n```").source, JsonSource::FencedAny); }
TEST(ExtractJson, JsonFencePreferredOverEarlierOtherFence) {
  const auto r = extract_json("```python\n{'x': 1}\n```\n```json\n{\"y\": 2}\n```");
  EXPECT_EQ(r.value["y"], 2);
}
TEST(ExtractJson, BareObject) {
  const auto r = extract_json("{\"a\": [1, 2]}");
  EXPECT_EQ(r.source, JsonSource::BalancedBraces);
  EXPECT_EQ(r.begin, 0u);
  EXPECT_EQ(r.end, 13u);
}
TEST(ExtractJson, ObjectInsideProse) { EXPECT_EQ(extract_json("Here: {\"k\": \"v\"} hope it helps").value["k"].get<std::string>(), "v"); }
TEST(ExtractJson, NestedObjects) { EXPECT_EQ(extract_json("x {\"a\": {\"b\": {\"c\": 3}}} y").value["a"]["b"]["c"], 3); }
TEST(ExtractJson, BracesInsideStrings) { EXPECT_EQ(extract_json("{\"t\": \"a } { b\"}").value["t"], "a } { b"); }
TEST(ExtractJson, EscapedQuotes) { EXPECT_EQ(extract_json(R"({"t": "say \"hi\" }"})").value["t"], "say \"hi\" }"); }
TEST(ExtractJson, RawNewlineInsideString) {
  EXPECT_EQ(extract_json("{\"NaturalReasoning\": \"line one\nline two\"}").value["NaturalReasoning"], "line one\nline two");
}
TEST(ExtractJson, SkipsInvalidBraceSpan) { EXPECT_EQ(extract_json("{not json} then {\"ok\": true}").value["ok"], true); }
TEST(ExtractJson, BrokenFenceFallsBackToBraces) {
  EXPECT_EQ(extract_json("```json\n{broken\n```\n{\"ok\": 1}").value["ok"], 1);
}
TEST(ExtractJson, ArrayInFence) { EXPECT_TRUE(extract_json("```json\n[1, 2]\n```").value.is_array()); }
TEST(ExtractJson, NoJsonThrowsWithRaw) {
  try {
    extract_json("I cannot answer that.");
    FAIL();
  } catch (const ExtractionError& e) {
    EXPECT_EQ(e.raw(), "I cannot answer that.");
  }
}
TEST(ExtractJson, UnterminatedObjectThrows) { EXPECT_THROW(extract_json("{\"a\": 1"), ExtractionError); }
