#include <gtest/gtest.h>

#include "testkit.hpp"
#include "veritrace/errors.hpp"
#include "veritrace/verifier.hpp"

using namespace veritrace;

TEST(VerifyExact, NormalizedSubstring) {
  EXPECT_TRUE(verify_exact("The answer is Metformin.", "metformin").value);
  EXPECT_TRUE(verify_exact("vitamin-B12 deficiency", "Vitamin B12").value);
  EXPECT_FALSE(verify_exact("insulin", "metformin").value);
  EXPECT_FALSE(verify_exact("anything", "...").value);
  EXPECT_EQ(verify_exact("a", "a").method, VerifyMethod::ExactMatch);
}

TEST(MapJudgeReply, Cases) {
  EXPECT_EQ(map_judge_reply("True"), true);
  EXPECT_EQ(map_judge_reply("  FALSE. "), false);
  EXPECT_EQ(map_judge_reply("The response is true"), true);
  EXPECT_EQ(map_judge_reply("true or false?"), std::nullopt);
  EXPECT_EQ(map_judge_reply("Yes"), std::nullopt);
  EXPECT_EQ(map_judge_reply(""), std::nullopt);
}

TEST(VerifyLlm, UsesJudgeAtTemperatureZero) {
  ScriptedBackend judge({ScriptEntry::always("verifier", "True")});
  const auto v = verify_llm("pertussis", "Whooping cough", judge, PromptLibrary::defaults());
  EXPECT_TRUE(v.value);
  EXPECT_FALSE(v.is_error());
  EXPECT_EQ(v.method, VerifyMethod::LlmJudge);
  ASSERT_EQ(judge.requests().size(), 1u);
  EXPECT_EQ(judge.requests()[0].temperature, 0.0);
  EXPECT_NE(judge.requests()[0].last_user_content().find("pertussis"), std::string::npos);
}

TEST(VerifyLlm, RetriesOnceOnAmbiguousReply) {
  ScriptedBackend judge({ScriptEntry::sequence("verifier", {"hmm", "False"})});
  const auto v = verify_llm("x", "y", judge, PromptLibrary::defaults());
  EXPECT_FALSE(v.value);
  EXPECT_FALSE(v.is_error());
  EXPECT_EQ(judge.calls(), 2u);
}

TEST(VerifyLlm, SecondAmbiguousReplyIsAnError) {
  ScriptedBackend judge({ScriptEntry::sequence("verifier", {"maybe", "not sure", "True"})});
  const auto v = verify_llm("x", "y", judge, PromptLibrary::defaults());
  EXPECT_TRUE(v.is_error());
  EXPECT_EQ(judge.calls(), 2u);
}

TEST(VerifyLlm, BackendFailureIsAnError) {
  ScriptedBackend judge({});
  EXPECT_TRUE(verify_llm("x", "y", judge, PromptLibrary::defaults()).is_error());
}

TEST(EvaluateVerifier, ConfusionCountsByHand) {
  // labels:      T  T  F  F  T
  // predictions: T  F  T  F  error
  const std::vector<AnnotatedSample> samples = {
      {"p1", "a", "a", true}, {"p2", "b", "x", true}, {"p3", "c", "c", false}, {"p4", "d", "y", false},
      {"p5", "e", "e", true}};
  auto fn = [](std::string_view response, std::string_view truth) {
    Verdict v;
    v.method = VerifyMethod::LlmJudge;
    if (response == "e") {
      v.error = "judge down";
      return v;
    }
    v.value = response == truth;
    return v;
  };
  const auto e = evaluate_verifier(samples, VerifyMethod::LlmJudge, fn, 3);
  EXPECT_EQ(e.total, 5u);
  EXPECT_EQ(e.tp, 1u);
  EXPECT_EQ(e.fn, 2u);
  EXPECT_EQ(e.fp, 1u);
  EXPECT_EQ(e.tn, 1u);
  EXPECT_EQ(e.errors, 1u);
  EXPECT_DOUBLE_EQ(e.accuracy, 0.4);
  EXPECT_TRUE(e.samples[4].error);
  EXPECT_FALSE(e.samples[4].predicted);
  EXPECT_THROW(evaluate_verifier({}, VerifyMethod::ExactMatch, fn), ArgumentError);
}

TEST(EvaluateVerifier, LoadsAnnotatedFile) {
  const auto samples = load_annotated(testkit::data_path("verifier/annotated_40.jsonl"));
  EXPECT_EQ(samples.size(), 40u);
  const auto dir = testkit::temp_dir("annot");
  atomic_write(dir / "bad.jsonl", "{\"problem_id\":\"p\",\"model_answer\":\"\",\"ground_truth\":\"g\",\"human_label\":true}\n");
  EXPECT_THROW(load_annotated(dir / "bad.jsonl"), IoError);
}
