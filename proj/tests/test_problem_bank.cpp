#include <gtest/gtest.h>

#include <set>

#include "testkit.hpp"
#include "veritrace/errors.hpp"
#include "veritrace/problem_bank.hpp"
#include "veritrace/random.hpp"

using namespace veritrace;

namespace {

McqRecord mcq(const std::string& id) {
  McqRecord m;
  m.id = id;
  m.question = "Which vessel supplies the sinoatrial node in most people?";
  m.options = {{"A", "Right coronary artery"}, {"B", "Left circumflex artery"}};
  m.answer_label = "A";
  return m;
}

}  // namespace

TEST(ProblemBank, McqInvariants) {
  EXPECT_FALSE(validate(mcq("m1")).has_value());
  auto bad = mcq("m2");
  bad.answer_label = "C";
  EXPECT_TRUE(validate(bad).has_value());
  bad = mcq("m3");
  bad.options = {{"A", "only one"}};
  EXPECT_TRUE(validate(bad).has_value());
}

TEST(ProblemBank, ProblemRejectsOptionLabelsInQuestion) {
  EXPECT_FALSE(validate(testkit::problem("p", "Which enzyme is deficient in classic galactosemia?", "GALT")).has_value());
  EXPECT_TRUE(validate(testkit::problem("p", "Which organ stores glycogen?", "A) liver")).has_value());
  EXPECT_TRUE(validate(testkit::problem("p", "Which organ stores glycogen?", "(B")).has_value());
  EXPECT_TRUE(validate(testkit::problem("p", "Q?\nA. first\nB. second", "first")).has_value());
  EXPECT_TRUE(validate(testkit::problem("p", "Question?", "  ")).has_value());
}

TEST(ProblemBank, IngestReportsBadLinesWithoutAborting) {
  const auto dir = testkit::temp_dir("ingest");
  const auto path = dir / "mcq.jsonl";
  std::vector<McqRecord> recs = {mcq("m1"), mcq("m2")};
  write_mcqs(path, recs);
  append_line(path, "{broken\n");
  append_line(path, dump_line(to_json(mcq("m1"))) + "\n");
  const auto r = ingest_mcqs(path);
  EXPECT_EQ(r.records.size(), 2u);
  ASSERT_EQ(r.issues.size(), 2u);
  EXPECT_EQ(r.issues[0].line, 3u);
  EXPECT_EQ(r.issues[1].reason, "duplicate id");
}

TEST(ProblemBank, RoundTripProblems) {
  const auto dir = testkit::temp_dir("problems");
  auto p = testkit::problem("p1", "Which nerve innervates the deltoid?", "Axillary nerve");
  p.origin_mcq_id = "m9";
  p.tags = {"source:x", "lang:en"};
  write_problems(dir / "p.jsonl", {p});
  const auto back = ingest_problems(dir / "p.jsonl");
  ASSERT_EQ(back.records.size(), 1u);
  EXPECT_EQ(back.records[0], p);
}

TEST(ProblemBank, SplitRoundsHalfUpAndIsDisjoint) {
  std::vector<VerifiableProblem> ps;
  for (int i = 0; i < 5; ++i) ps.push_back(testkit::problem("p" + std::to_string(i), "Question " + std::to_string(i) + "?", "x"));
  const auto s = split(ps, 0.5, 11);
  EXPECT_EQ(s.search_set.size(), 3u);
  EXPECT_EQ(s.rl_set.size(), 2u);
  std::set<std::string> all(s.search_set.begin(), s.search_set.end());
  all.insert(s.rl_set.begin(), s.rl_set.end());
  EXPECT_EQ(all.size(), 5u);
  EXPECT_EQ(split(ps, 0.5, 11), s);
  EXPECT_THROW(split(ps, 0.0, 1), ArgumentError);
  EXPECT_THROW(split(ps, 1.0, 1), ArgumentError);
  EXPECT_THROW(split({}, 0.5, 1), ArgumentError);
}

TEST(Decontamination, WindowBoundary) {
  const std::string shared(64, 'x');
  const auto hit = testkit::problem("hit", "alpha " + shared + " omega", "a");
  const auto miss = testkit::problem("miss", "alpha " + shared.substr(0, 63) + " omega", "a");
  const auto r = decontaminate({hit, miss}, {"other-" + shared + "-text"}, {});
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(r.removed[0].problem.id, "hit");
  EXPECT_GE(r.removed[0].evidence.size(), 64u);
  EXPECT_EQ(r.kept.size(), 1u);
}

TEST(Decontamination, NormalizationMakesCaseAndSpacingIrrelevant) {
  const std::string q = "A 45-year-old man presents with crushing chest pain radiating to the left arm and jaw";
  const std::string e = "a 45-year-old   MAN presents with crushing\nchest pain radiating to the left arm and jaw";
  EXPECT_EQ(decontaminate({testkit::problem("p", q, "MI")}, {e}, {}).removed.size(), 1u);
}

TEST(Decontamination, AnswersOnlyWhenAsked) {
  const std::string answer(70, 'z');
  const auto p = testkit::problem("p", "short question", answer);
  EXPECT_TRUE(decontaminate({p}, {answer}, {}).removed.empty());
  DecontaminationOptions opt;
  opt.include_answers = true;
  EXPECT_EQ(decontaminate({p}, {answer}, opt).removed.size(), 1u);
}

TEST(Decontamination, RejectsTinyWindow) {
  DecontaminationOptions opt;
  opt.window = 4;
  EXPECT_THROW(decontaminate({}, {"x"}, opt), ArgumentError);
}

TEST(Decontamination, BatchMatchesNaiveOracle) {
  Rng rng(99);
  const std::string alphabet = "abcde ";
  auto random_text = [&](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += alphabet[rng.uniform_index(alphabet.size())];
    return s;
  };
  std::vector<VerifiableProblem> ps;
  std::vector<std::string> evals;
  for (int i = 0; i < 40; ++i) evals.push_back(random_text(150));
  for (int i = 0; i < 60; ++i) {
    std::string q = random_text(120);
    if (i % 3 == 0) {
      const auto& e = evals[rng.uniform_index(evals.size())];
      q += e.substr(rng.uniform_index(60), 20 + rng.uniform_index(60));
    }
    ps.push_back(testkit::problem("p" + std::to_string(i), q, "x"));
  }
  for (std::size_t window : {8u, 16u, 64u}) {
    DecontaminationOptions opt;
    opt.window = window;
    opt.concurrency = 3;
    const auto got = decontaminate(ps, evals, opt);
    std::set<std::string> removed;
    for (const auto& r : got.removed) removed.insert(r.problem.id);
    EXPECT_EQ(removed, testkit::naive_contaminated(ps, evals, window)) << "window " << window;
    EXPECT_EQ(got.kept.size() + got.removed.size(), ps.size());
  }
}

TEST(Decontamination, ReportNamesEvidence) {
  const std::string shared(80, 'q');
  const auto r = decontaminate({testkit::problem("p", shared, "a")}, {shared}, {});
  const auto rep = removal_report(r, 64);
  ASSERT_EQ(rep.size(), 1u);
  EXPECT_EQ(rep[0]["id"], "p");
  EXPECT_EQ(rep[0]["evidence"].get<std::string>().size(), 80u);
}
