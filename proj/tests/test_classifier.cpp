#include <gtest/gtest.h>

#include <atomic>

#include "pir/classifier.hpp"
#include "pir/errors.hpp"
#include "pir/segmenter.hpp"
#include "support/fixtures.hpp"

namespace {

using namespace pir;

std::optional<Pattern> rule(std::string_view text) {
  static const PhraseTable table = PhraseTable::defaults();
  auto m = classify_rule(text, table);
  return m ? std::optional<Pattern>(m->pattern) : std::nullopt;
}

TEST(PhraseTable, DefaultsCoverAllPatterns) {
  const auto t = PhraseTable::defaults();
  EXPECT_EQ(t.version(), "phrases-v1");
  EXPECT_EQ(t.phrases(Pattern::ProgressiveReasoning).size(), 7u);
  EXPECT_EQ(t.phrases(Pattern::Verification).size(), 5u);
  EXPECT_EQ(t.phrases(Pattern::MultiMethodValidation).size(), 5u);
  EXPECT_EQ(t.phrases(Pattern::ErrorCorrection).size(), 5u);
  EXPECT_TRUE(t.contains("Let me verify"));
}

TEST(PhraseTable, FromJsonRejectsUnknownLabels) {
  EXPECT_THROW(PhraseTable::from_json(R"({"version":"x","patterns":{"nonsense":["a"]}})"), Error);
  EXPECT_THROW(PhraseTable::from_json("not json"), Error);
  const auto t = PhraseTable::from_json(R"({"version":"mine","patterns":{"verification":["Hmm"]}})");
  EXPECT_EQ(t.version(), "mine");
  EXPECT_EQ(rule("Hmm, is that right?"), std::nullopt);
  EXPECT_EQ(classify_rule("Hmm, is that right?", t)->pattern, Pattern::Verification);
}

TEST(ClassifyRule, Examples) {
  EXPECT_EQ(rule("Wait, let me recompute."), Pattern::Verification);
  EXPECT_EQ(rule("First, we set up the equation."), Pattern::ProgressiveReasoning);
  EXPECT_EQ(rule("Alternatively, use symmetry."), Pattern::MultiMethodValidation);
  EXPECT_EQ(rule("The mistake was in line 2."), Pattern::ErrorCorrection);
  EXPECT_EQ(rule("x equals 4."), std::nullopt);
}

TEST(ClassifyRule, PriorityOrder) {
  EXPECT_EQ(rule("Wait, this is wrong."), Pattern::ErrorCorrection);
  EXPECT_EQ(rule("Then, alternatively, wait."), Pattern::MultiMethodValidation);
  EXPECT_EQ(rule("First, let me check."), Pattern::Verification);
}

TEST(ClassifyRule, WholePhraseCaseAndPunctuationFolding) {
  EXPECT_EQ(rule("Firstly the sum."), std::nullopt);
  EXPECT_EQ(rule("Waiting is over."), std::nullopt);
  EXPECT_EQ(rule("WAIT. Something."), Pattern::Verification);
  EXPECT_EQ(rule("Let me double check."), Pattern::Verification);
  EXPECT_EQ(rule("That’s impossible here."), Pattern::ErrorCorrection);
  EXPECT_EQ(rule("so therefore,"), Pattern::ProgressiveReasoning);
}

TEST(ClassifyRule, EarliestThenLongestPhraseIsReported) {
  const auto t = PhraseTable::defaults();
  EXPECT_EQ(classify_rule("Let me verify and then let me check.", t)->phrase, "Let me verify");
  EXPECT_EQ(classify_rule("Then we need to sum. First", t)->phrase, "Then");
}

TEST(ParseLabel, AcceptsNoiseAndSpaces) {
  EXPECT_EQ(parse_label("verification"), Pattern::Verification);
  EXPECT_EQ(parse_label("  \"Error Correction\".\n"), Pattern::ErrorCorrection);
  EXPECT_EQ(parse_label("**multi-method validation**"), Pattern::MultiMethodValidation);
  EXPECT_EQ(parse_label("The label is progressive_reasoning."), Pattern::ProgressiveReasoning);
  EXPECT_EQ(parse_label("verification or error_correction"), std::nullopt);
  EXPECT_EQ(parse_label("I would say error correction here"), Pattern::ErrorCorrection);
  EXPECT_EQ(parse_label("no idea"), std::nullopt);
}

TEST(ClassificationPrompt, RetriesHaveDistinctContent) {
  const StepContext ctx{"Q", "prev", "Check it.", "next"};
  const auto a = classification_prompt(ctx, 0), b = classification_prompt(ctx, 1), c = classification_prompt(ctx, 2);
  EXPECT_NE(a[0].content, b[0].content);
  EXPECT_NE(b[0].content, c[0].content);
  EXPECT_NE(a[0].content.find("Check it."), std::string::npos);
  EXPECT_NE(a[0].content.find("prev"), std::string::npos);
}

TEST(ClassifyLlm, RetriesUntilAValidLabel) {
  std::atomic<int> calls{0};
  ChatGateway chat(std::make_unique<CallbackChatBackend>(
      [&](std::span<const ChatMessage>) { return ++calls < 3 ? std::string("unsure") : std::string("verification"); },
      "flaky"));
  EXPECT_EQ(classify_llm({"Q", "", "Hmm.", ""}, chat), Pattern::Verification);
  EXPECT_EQ(calls.load(), 3);
}

TEST(ClassifyLlm, GivesUpAfterMaxAttempts) {
  ChatGateway chat(std::make_unique<CallbackChatBackend>(
      [](std::span<const ChatMessage>) { return std::string("banana"); }, "bad"));
  EXPECT_THROW(classify_llm({"Q", "", "Hmm.", ""}, chat, 2), ClassificationError);
}

TEST(ClassifyChain, FixtureIsLabeledByRulesWithoutLlmCalls) {
  std::atomic<int> calls{0};
  ChatGateway chat(std::make_unique<CallbackChatBackend>(
      [&](std::span<const ChatMessage>) {
        ++calls;
        return std::string("verification");
      },
      "counting"));
  const auto expected = fixtures::classifier_fixture_labels();
  auto samples = fixtures::classifier_fixture();
  std::size_t k = 0;
  for (auto& s : samples) {
    const auto stats = classify_chain(s, PhraseTable::defaults(), &chat);
    EXPECT_EQ(stats.rule, 10u);
    for (const auto& st : s.steps) {
      EXPECT_EQ(st.pattern, expected[k++]) << st.text;
      EXPECT_EQ(st.method, Method::Rule);
    }
  }
  EXPECT_EQ(k, 40u);
  EXPECT_EQ(calls.load(), 0);
  EXPECT_EQ(chat.counters().requests, 0u);
}

TEST(ClassifyChain, RuleMissesGoToTheLlmOrDefault) {
  AnnotatedSample s;
  s.base = {"a", "Q", "Wait.\n\nHmm.", "1"};
  s.steps.resize(2);
  s.steps[0].text = "Wait.";
  s.steps[0].separator = "\n\n";
  s.steps[1].index = 1;
  s.steps[1].text = "Hmm.";
  auto copy = s;
  const auto stats = classify_chain(copy, PhraseTable::defaults(), nullptr);
  EXPECT_EQ(stats.defaulted, 1u);
  EXPECT_EQ(copy.steps[1].pattern, Pattern::ProgressiveReasoning);
  EXPECT_EQ(copy.steps[1].method, Method::Default);
  EXPECT_EQ(copy.provenance.classifier, "rules:phrases-v1");

  ChatGateway chat(std::make_unique<CallbackChatBackend>(
      [](std::span<const ChatMessage> m) {
        EXPECT_NE(m[0].content.find("Wait."), std::string::npos);  // previous step is in context
        return std::string("error_correction");
      },
      "stub"));
  classify_chain(s, PhraseTable::defaults(), &chat);
  EXPECT_EQ(s.steps[1].pattern, Pattern::ErrorCorrection);
  EXPECT_EQ(s.steps[1].method, Method::Llm);
  EXPECT_EQ(s.provenance.classifier, "rules:phrases-v1+llm:stub");
  EXPECT_EQ(join_steps(s.steps), s.base.reasoning);
}

TEST(ClassifyChain, FixtureCorpusMatchesGeneratorLabels) {
  for (const auto& f : fixtures::corpus(100)) {
    auto s = to_annotated(f.raw, segment_deterministic(f.raw.reasoning), "deterministic");
    classify_chain(s, PhraseTable::defaults(), nullptr);
    ASSERT_EQ(s.steps.size(), f.labels.size());
    for (std::size_t k = 0; k < s.steps.size(); ++k) {
      EXPECT_EQ(s.steps[k].pattern, f.labels[k]) << s.steps[k].text;
    }
  }
}

}  // namespace
