#include <gtest/gtest.h>

#include "cvr/coc_eval.hpp"
#include "cvr/error.hpp"
#include "support/fixtures.hpp"

using namespace cvr;
namespace fx = cvr::fixtures;

namespace {

ComparisonCase goldfish() {
  return {"whoops-1", "Explain what is unusual about this image.", "A goldfish is swimming in a glass bowl.",
          "A goldfish is sitting in a birdcage, which is unusual because fish need water.",
          TaskKind::Whoops};
}

ComparisonVerdict verdict(ComparisonStep step, Outcome o) {
  ComparisonVerdict v;
  v.step = step;
  v.outcome = o;
  return v;
}

// counts per step: {caption_better, description_better, equal, unparsed}
std::vector<std::vector<ComparisonVerdict>> synth(const std::vector<std::array<int, 4>>& per_step) {
  std::size_t n = 0;
  for (int c : per_step[0]) n += static_cast<std::size_t>(c);
  std::vector<std::vector<ComparisonVerdict>> cases(n);
  for (std::size_t s = 0; s < per_step.size(); ++s) {
    std::size_t i = 0;
    const Outcome outs[] = {Outcome::OptionABetter, Outcome::OptionBBetter, Outcome::Equal, Outcome::Unparseable};
    for (int b = 0; b < 4; ++b) {
      for (int c = 0; c < per_step[s][b]; ++c) cases[i++].push_back(verdict(kCocSteps[s], outs[b]));
    }
  }
  return cases;
}

}  // namespace

TEST(Verdict, Parsing) {
  EXPECT_EQ(parse_verdict("True"), Outcome::OptionBBetter);
  EXPECT_EQ(parse_verdict("false"), Outcome::OptionABetter);
  EXPECT_EQ(parse_verdict("equal."), Outcome::Equal);
  EXPECT_EQ(parse_verdict("It is TRUE, clearly true."), Outcome::OptionBBetter);
  EXPECT_EQ(parse_verdict("maybe"), Outcome::Unparseable);
  EXPECT_EQ(parse_verdict("True or False"), Outcome::Unparseable);
  EXPECT_EQ(parse_verdict("untrue"), Outcome::Unparseable);
  EXPECT_EQ(parse_verdict("equally good"), Outcome::Unparseable);
  EXPECT_EQ(parse_verdict(""), Outcome::Unparseable);
}

TEST(Verdict, Invert) {
  EXPECT_EQ(invert(Outcome::OptionABetter), Outcome::OptionBBetter);
  EXPECT_EQ(invert(Outcome::OptionBBetter), Outcome::OptionABetter);
  EXPECT_EQ(invert(Outcome::Equal), Outcome::Equal);
  EXPECT_EQ(invert(Outcome::Unparseable), Outcome::Unparseable);
}

TEST(Judge, DirectRepromptsOnce) {
  fx::Rig rig;
  rig.mock->script_text(Role::Judge, {"maybe", "equal."});
  const auto templates = TemplateSet::defaults();
  ComparisonJudge judge(*rig.gateway, templates);
  const auto v = judge.direct_compare(goldfish());
  EXPECT_EQ(v.outcome, Outcome::Equal);
  EXPECT_TRUE(v.reprompted);
  EXPECT_EQ(rig.mock->calls(Role::Judge), 2u);
  EXPECT_NE(rig.mock->log()[1].request.find(templates.get("verdict_reminder").text().substr(0, 20)), std::string::npos);
}

TEST(Judge, DirectUnparseableAfterTwoTries) {
  fx::Rig rig;
  rig.mock->script_text(Role::Judge, {"maybe", "True or False"});
  const auto templates = TemplateSet::defaults();
  const auto v = ComparisonJudge(*rig.gateway, templates).direct_compare(goldfish());
  EXPECT_EQ(v.outcome, Outcome::Unparseable);
  EXPECT_EQ(rig.mock->calls(Role::Judge), 2u);
}

TEST(Judge, ChainOfComparisonFourCallsInOrder) {
  fx::Rig rig;
  rig.mock->script_text(Role::Judge, {"True", "True", "False", "Equal"});
  const auto templates = TemplateSet::defaults();
  const auto vs = ComparisonJudge(*rig.gateway, templates).coc_compare(goldfish());
  ASSERT_EQ(vs.size(), 4u);
  EXPECT_EQ(rig.mock->calls(Role::Judge), 4u);
  const std::vector<Outcome> want{Outcome::OptionBBetter, Outcome::OptionBBetter, Outcome::OptionABetter, Outcome::Equal};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(vs[i].outcome, want[i]);
    EXPECT_EQ(vs[i].step, kCocSteps[i]);
  }
  const auto log = rig.mock->log();
  for (std::size_t i = 0; i < 4; ++i) {
    const auto body = nlohmann::json::parse(log[i].request)["payload"]["messages"][0]["content"].get<std::string>();
    EXPECT_EQ(body, templates.get(template_name(kCocSteps[i]))
                        .render({{"task", goldfish().task_text},
                                 {"option_a", goldfish().option_a},
                                 {"option_b", goldfish().option_b}}));
  }
}

TEST(Judge, GoldfishPromptsCarryBothOptions) {
  fx::Rig rig;
  rig.mock->set_responder(Role::Judge, rule_responder({}, "True"));
  const auto templates = TemplateSet::defaults();
  const auto vs = ComparisonJudge(*rig.gateway, templates).compare(goldfish(), Protocol::CoC);
  for (const auto& v : vs) EXPECT_EQ(v.outcome, Outcome::OptionBBetter);
  for (const auto& c : rig.mock->log()) {
    EXPECT_NE(c.request.find("bowl"), std::string::npos);
    EXPECT_NE(c.request.find("birdcage"), std::string::npos);
  }
}

TEST(Judge, StepFailureDoesNotStopOthers) {
  fx::Rig rig;
  rig.gateway = std::make_unique<Gateway>();
  rig.gateway->attach(fx::profile(Role::Judge, 0), rig.mock);
  rig.mock->script(Role::Judge, {MockReply::reply("True"), MockReply::protocol("boom"), MockReply::reply("False"),
                                 MockReply::reply("Equal")});
  const auto templates = TemplateSet::defaults();
  const auto vs = ComparisonJudge(*rig.gateway, templates).coc_compare(goldfish());
  EXPECT_EQ(vs[1].outcome, Outcome::Unparseable);
  EXPECT_NE(vs[1].error.find("boom"), std::string::npos);
  EXPECT_EQ(vs[3].outcome, Outcome::Equal);
}

TEST(Judge, RejectsDegenerateCases) {
  fx::Rig rig;
  const auto templates = TemplateSet::defaults();
  ComparisonJudge judge(*rig.gateway, templates);
  auto c = goldfish();
  c.option_b = c.option_a;
  EXPECT_THROW(judge.direct_compare(c), ConfigError);
  c.option_b = "  ";
  EXPECT_THROW(judge.coc_compare(c), ConfigError);
  EXPECT_EQ(rig.mock->log().size(), 0u);
}

TEST(Judge, SwapInvariance) {
  // A judge that prefers the longer option answers consistently under swap.
  auto longer = [](const ModelRequest& r) {
    const auto text = r.payload["messages"].back()["content"].get<std::string>();
    const auto a = text.find("A goldfish is swimming in a glass bowl.");
    const auto b = text.find("A goldfish is sitting in a birdcage");
    return ModelResponse{a < b ? "True" : "False", {}};
  };
  const auto templates = TemplateSet::defaults();
  fx::Rig r1, r2;
  r1.mock->set_responder(Role::Judge, longer);
  r2.mock->set_responder(Role::Judge, longer);
  const auto v = ComparisonJudge(*r1.gateway, templates).coc_compare(goldfish());
  const auto w = ComparisonJudge(*r2.gateway, templates).coc_compare(goldfish().swapped());
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(invert(w[i].outcome), v[i].outcome);
}

TEST(Judge, ExplanationAcceptance) {
  fx::Rig rig;
  rig.mock->script_text(Role::Judge, {"True", "Equal", "False"});
  const auto templates = TemplateSet::defaults();
  ComparisonJudge judge(*rig.gateway, templates);
  EXPECT_TRUE(ComparisonJudge::accepted(judge.judge_explanation("t", "ref", "one")));
  EXPECT_TRUE(ComparisonJudge::accepted(judge.judge_explanation("t", "ref", "two")));
  EXPECT_FALSE(ComparisonJudge::accepted(judge.judge_explanation("t", "ref", "three")));
  EXPECT_FALSE(ComparisonJudge::accepted(judge.judge_explanation("t", "ref", "")));
  EXPECT_EQ(rig.mock->calls(Role::Judge), 3u);
}

TEST(Aggregate, AveragesAcrossSteps) {
  // Percent triples per step sum to 100 except step 3 (rounded inputs).
  const auto cases = synth({{60, 753, 187, 0}, {43, 760, 197, 0}, {83, 713, 204, 0}, {50, 767, 183, 0}});
  const auto r = aggregate_verdicts(cases);
  EXPECT_EQ(r.cases, 1000u);
  ASSERT_EQ(r.steps.size(), 4u);
  EXPECT_NEAR(r.steps[0].percent.description_better, 75.3, 1e-9);
  EXPECT_NEAR(r.steps[2].percent.caption_better, 8.3, 1e-9);
  ASSERT_TRUE(r.average);
  EXPECT_NEAR(r.average->description_better, 74.8, 0.05);
  EXPECT_NEAR(r.average->caption_better, 5.9, 0.05);
  EXPECT_NEAR(r.average->equal, 19.3, 0.05);
  const auto table = r.render_table();
  EXPECT_NE(table.find("Description Better"), std::string::npos);
  EXPECT_NE(table.find("74.8"), std::string::npos);
  EXPECT_NE(table.find("Step 4"), std::string::npos);
}

TEST(Aggregate, AllEqual) {
  const auto r = aggregate_verdicts(synth({{0, 0, 10, 0}, {0, 0, 10, 0}, {0, 0, 10, 0}, {0, 0, 10, 0}}));
  EXPECT_EQ(*r.average, (BucketPercent{0.0, 0.0, 100.0}));
}

TEST(Aggregate, UnparsedExcludedFromPercentages) {
  const auto r = aggregate_verdicts(synth({{1, 2, 1, 6}, {0, 4, 0, 6}, {2, 2, 0, 6}, {0, 0, 0, 10}}));
  EXPECT_EQ(r.unparsed, 28u);
  EXPECT_NEAR(r.steps[0].percent.description_better, 50.0, 1e-12);
  EXPECT_NEAR(r.steps[0].percent_all.description_better, 20.0, 1e-12);
  EXPECT_TRUE(r.steps[3].flagged);
  ASSERT_TRUE(r.average);
  // Mean of the three unflagged steps.
  EXPECT_NEAR(r.average->description_better, round1((50.0 + 100.0 + 50.0) / 3), 1e-12);
  EXPECT_NE(r.render_table().find("n/a"), std::string::npos);
}

TEST(Aggregate, EveryStepFlagged) {
  const auto r = aggregate_verdicts(synth({{0, 0, 0, 3}, {0, 0, 0, 3}, {0, 0, 0, 3}, {0, 0, 0, 3}}));
  EXPECT_FALSE(r.average.has_value());
}

TEST(Aggregate, DirectProtocolAndMixedRejected) {
  std::vector<std::vector<ComparisonVerdict>> direct{{verdict(ComparisonStep::Direct, Outcome::OptionBBetter)},
                                                     {verdict(ComparisonStep::Direct, Outcome::OptionABetter)}};
  const auto r = aggregate_verdicts(direct);
  EXPECT_EQ(r.protocol, Protocol::Direct);
  EXPECT_EQ(r.steps[0].percent.description_better, 50.0);
  EXPECT_EQ(r.render_table().find("Average"), std::string::npos);
  direct.push_back(synth({{1, 0, 0, 0}, {1, 0, 0, 0}, {1, 0, 0, 0}, {1, 0, 0, 0}})[0]);
  EXPECT_THROW(aggregate_verdicts(direct), ConfigError);
}

TEST(Aggregate, SwappingInvertsReport) {
  auto cases = synth({{3, 5, 2, 0}, {1, 8, 1, 0}, {4, 4, 2, 0}, {0, 9, 1, 0}});
  auto swapped = cases;
  for (auto& c : swapped) {
    for (auto& v : c) v.outcome = invert(v.outcome);
  }
  const auto a = aggregate_verdicts(cases);
  const auto b = aggregate_verdicts(swapped);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.steps[i].caption_better, b.steps[i].description_better);
    EXPECT_EQ(a.steps[i].equal, b.steps[i].equal);
  }
}

TEST(Aggregate, JsonlHasStepsAndAverage) {
  const auto r = aggregate_verdicts(synth({{1, 1, 0, 0}, {1, 1, 0, 0}, {1, 1, 0, 0}, {1, 1, 0, 0}}));
  const auto text = r.to_jsonl();
  std::size_t lines = 0;
  for (char c : text) lines += c == '\n';
  EXPECT_EQ(lines, 5u);
  EXPECT_NE(text.find("\"average\""), std::string::npos);
}

TEST(Round1, HalfAwayFromZero) {
  EXPECT_EQ(round1(74.825), 74.8);
  EXPECT_EQ(round1(0.05), 0.1);
  EXPECT_EQ(round1(0.25), 0.3);
  EXPECT_EQ(round1(-0.25), -0.3);
  EXPECT_EQ(round1(19.275), 19.3);
}
