#include <gtest/gtest.h>

#include <set>

#include "testkit.hpp"
#include "veritrace/errors.hpp"
#include "veritrace/sft_synthesis.hpp"

using namespace veritrace;

namespace {

std::string merge_reply(const std::string& reasoning) {
  return "```json\n" + json({{"NaturalReasoning", reasoning}}).dump() + "\n```";
}

TrajectoryNode node(int i, const std::string& marker, bool verdict) {
  TrajectoryNode n;
  n.iteration = i;
  n.strategy = i == 0 ? StrategyKind::Init : StrategyKind::Correction;
  n.steps = {{CotAction::InnerThinking, "Step " + marker, "considering " + marker},
             {CotAction::FinalConclusion, "", "answer " + marker}};
  n.answer = "answer " + marker;
  n.verdict = verdict;
  return n;
}

SearchTrace three_node_trace(const std::string& id) {
  SearchTrace t;
  t.problem_id = id;
  t.attempts.push_back({{node(0, "ZERO", false), node(1, "ONE", false), node(2, "TWO", true)}, std::nullopt});
  t.success = SearchSuccess{0, 2};
  return t;
}

SftRecord rec(const std::string& id, Provenance p = Provenance::Searched) {
  return {id, "Question " + id + "?", p == Provenance::UnconvertedMcq ? "" : "reasoning for " + id,
          "response " + id, p};
}

McqRecord mcq(const std::string& id) {
  McqRecord m;
  m.id = id;
  m.question = "Which vitamin is " + id + "?";
  m.options = {{"A", "Thiamine"}, {"B", "Niacin"}};
  m.answer_label = "B";
  return m;
}

}  // namespace

TEST(SftRecord, ValidateAndRoundTrip) {
  EXPECT_EQ(validate(rec("a")), std::nullopt);
  EXPECT_EQ(validate(rec("u", Provenance::UnconvertedMcq)), std::nullopt);
  auto bad = rec("a");
  bad.complex_cot.clear();
  EXPECT_TRUE(validate(bad));
  bad = rec("u", Provenance::UnconvertedMcq);
  bad.complex_cot = "x";
  EXPECT_TRUE(validate(bad));
  bad = rec("a");
  bad.response = " ";
  EXPECT_TRUE(validate(bad));
  for (const auto& r : {rec("a"), rec("u", Provenance::UnconvertedMcq), rec("g", Provenance::GeneralDomain)}) {
    EXPECT_EQ(sft_from_json(to_json(r)), r);
  }
}

TEST(SftRecord, TrainingTextLayout) {
  EXPECT_EQ(render_training_text(rec("a")), "## Thinking\nreasoning for a\n\n## Final Response\nresponse a");
  EXPECT_EQ(render_training_text(rec("u", Provenance::UnconvertedMcq)), "response u");
}

TEST(MergeCot, PromptListsWinningPathInOrder) {
  const auto p = testkit::problem("p", "Which drug?", "answer TWO");
  ScriptedBackend gen({ScriptEntry::always("merge", merge_reply("First I thought, then I checked."))});
  const auto out = merge_cot(p, three_node_trace("p"), gen, PromptLibrary::defaults());
  ASSERT_TRUE(out.text) << out.failure;
  EXPECT_EQ(*out.text, "First I thought, then I checked.");
  const std::string prompt = gen.requests().at(0).last_user_content();
  const auto a = prompt.find("considering ZERO"), b = prompt.find("considering ONE"), c = prompt.find("considering TWO");
  ASSERT_NE(a, std::string::npos);
  ASSERT_NE(b, std::string::npos);
  ASSERT_NE(c, std::string::npos);
  EXPECT_LT(a, b);
  EXPECT_LT(b, c);
  EXPECT_NE(prompt.find("Which drug?"), std::string::npos);
}

TEST(MergeCot, RetriesWhenMarkersSurvive) {
  const auto p = testkit::problem("p", "Which drug?", "x");
  ScriptedBackend gen({ScriptEntry::sequence(
      "merge", {"no json", merge_reply("Inner Thinking: hmm"), merge_reply("Plain prose reasoning.")})});
  const auto out = merge_cot(p, three_node_trace("p"), gen, PromptLibrary::defaults());
  ASSERT_TRUE(out.text);
  EXPECT_EQ(out.attempts, 3);
  ScriptedBackend stubborn({ScriptEntry::always("merge", merge_reply("## Final Response\nx"))});
  const auto fail = merge_cot(p, three_node_trace("p"), stubborn, PromptLibrary::defaults());
  EXPECT_FALSE(fail.text);
  EXPECT_NE(fail.failure.find("## Final Response"), std::string::npos);
  SearchTrace discarded;
  discarded.problem_id = "p";
  EXPECT_THROW(merge_cot(p, discarded, gen, PromptLibrary::defaults()), ArgumentError);
}

TEST(GenerateResponse, RetriesBlankReplies) {
  ScriptedBackend gen({ScriptEntry::sequence("response", {"", "   ", "Metformin is first line."})});
  const auto out = generate_response("Q?", "because", gen, PromptLibrary::defaults());
  ASSERT_TRUE(out.text);
  EXPECT_EQ(out.attempts, 3);
  EXPECT_THROW(generate_response("Q?", " ", gen, PromptLibrary::defaults()), ArgumentError);
}

TEST(Synthesize, ConsistencyGateDropsContradictingResponses) {
  const std::vector<VerifiableProblem> problems = {testkit::problem("ok", "QOK?", "metformin"),
                                                   testkit::problem("bad", "QBAD?", "metformin")};
  SearchTrace discarded;
  discarded.problem_id = "ok";
  const std::vector<SearchTrace> traces = {three_node_trace("ok"), three_node_trace("bad"), discarded,
                                           three_node_trace("ghost")};
  ScriptedBackend gen({ScriptEntry::always("merge", merge_reply("Long careful reasoning.")),
                       ScriptEntry::always("response", "Start insulin.", "QBAD"),
                       ScriptEntry::always("response", "Start metformin.")});
  const auto r = synthesize(problems, traces, gen, make_exact_verifier(), PromptLibrary::defaults());
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].problem_id, "ok");
  EXPECT_EQ(r.records[0].response, "Start metformin.");
  EXPECT_EQ(r.report.traces, 4u);
  EXPECT_EQ(r.report.successful_traces, 3u);
  std::set<std::string> stages;
  for (const auto& d : r.report.drops) stages.insert(d.problem_id + ":" + d.stage);
  EXPECT_EQ(stages, (std::set<std::string>{"bad:consistency", "ghost:unknown_problem"}));
}

TEST(AssembleDataset, RecipeCountsAndDeterminism) {
  std::vector<SftRecord> searched, general;
  std::vector<McqRecord> mcqs;
  for (int i = 0; i < 10; ++i) {
    searched.push_back(rec("s" + std::to_string(i)));
    general.push_back(rec("g" + std::to_string(i), Provenance::GeneralDomain));
    mcqs.push_back(mcq("u" + std::to_string(i)));
  }
  const Recipe recipe{4, 3, 2};
  const auto a = assemble_dataset(searched, mcqs, general, recipe, 3);
  EXPECT_EQ(a.size(), 9u);
  EXPECT_EQ(a, assemble_dataset(searched, mcqs, general, recipe, 3));
  EXPECT_NE(a, assemble_dataset(searched, mcqs, general, recipe, 4));
  EXPECT_EQ(compute_stats(a).provenance_counts,
            (std::map<std::string, std::size_t>{{"searched", 4}, {"unconverted_mcq", 3}, {"general_domain", 2}}));
  EXPECT_TRUE(assemble_dataset(searched, mcqs, general, Recipe{}, 3).empty());
}

TEST(AssembleDataset, ErrorsNameTheSource) {
  const std::vector<SftRecord> searched = {rec("x")};
  try {
    assemble_dataset(searched, {}, {}, Recipe{1, 1, 0}, 0);
    FAIL();
  } catch (const ArgumentError& e) {
    EXPECT_NE(std::string(e.what()).find("unconverted_mcq"), std::string::npos);
  }
  const std::vector<SftRecord> general = {rec("x", Provenance::GeneralDomain)};
  EXPECT_THROW(assemble_dataset(searched, {}, general, Recipe{1, 0, 1}, 0), ArgumentError);
}

TEST(McqToRecord, OptionsInQuestionGoldAsResponse) {
  const auto r = mcq_to_record(mcq("u1"));
  EXPECT_EQ(r.provenance, Provenance::UnconvertedMcq);
  EXPECT_TRUE(r.complex_cot.empty());
  EXPECT_EQ(r.response, "Niacin");
  EXPECT_NE(r.question.find("Thiamine"), std::string::npos);
  EXPECT_EQ(validate(r), std::nullopt);
}

TEST(DatasetStats, MeansByHand) {
  std::vector<SftRecord> records = {rec("a"), rec("b"), rec("u", Provenance::UnconvertedMcq)};
  records[0].complex_cot = "one two three four five six seven eight nine ten";
  records[1].complex_cot = records[0].complex_cot + " " + records[0].complex_cot;
  records[0].response = "a b";
  records[1].response = "a b c d";
  records[2].response = "a b c";
  const auto s = compute_stats(records);
  EXPECT_EQ(s.record_count, 3u);
  EXPECT_DOUBLE_EQ(s.mean_cot_tokens, 15.0);
  EXPECT_DOUBLE_EQ(s.mean_response_tokens, 3.0);
  const auto chars = compute_stats(records, [](std::string_view t) { return t.size(); }, "chars");
  EXPECT_EQ(chars.token_counter, "chars");
  EXPECT_EQ(whitespace_token_count("  a\tb\n c  "), 3u);
}

TEST(Emit, IngestRoundTrip) {
  const auto dir = testkit::temp_dir("emit");
  const std::vector<SftRecord> records = {rec("a"), rec("u", Provenance::UnconvertedMcq),
                                          rec("g", Provenance::GeneralDomain)};
  const auto stats = emit(records, dir / "sft.jsonl");
  EXPECT_EQ(stats.record_count, 3u);
  EXPECT_EQ(ingest_sft(dir / "sft.jsonl"), records);
  atomic_write(dir / "bad.jsonl", to_json(records[0]).dump() + "\n{\"problem_id\": 1}\n");
  try {
    ingest_sft(dir / "bad.jsonl");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}
