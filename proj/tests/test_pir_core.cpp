#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <numbers>
#include <random>

#include "pir/classifier.hpp"
#include "pir/errors.hpp"
#include "pir/pir_core.hpp"
#include "pir/segmenter.hpp"
#include "support/fixtures.hpp"
#include "support/oracle.hpp"

namespace {

using namespace pir;

// Ignores the context: every ablation scores exactly like the full chain.
class ConstantBackend final : public ScoreBackend {
 public:
  TokenLogProbs score(const ScoreRequest& r) override {
    TokenLogProbs out;
    out.tokens = whitespace_tokens(r.continuation);
    out.logprobs.assign(out.tokens.size(), -0.7);
    return out;
  }
  std::string identity() const override { return "constant"; }
};

// Fails every request whose context lacks `needle`.
class FailingBackend final : public ScoreBackend {
 public:
  explicit FailingBackend(std::string needle) : needle_(std::move(needle)) {}
  TokenLogProbs score(const ScoreRequest& r) override {
    if (r.context.find(needle_) == std::string::npos) throw BackendError("refused");
    return inner_.score(r);
  }
  std::string identity() const override { return "failing"; }

 private:
  std::string needle_;
  DeterministicScoreBackend inner_{0};
};

AnnotatedSample labeled(const fixtures::Sample& f) {
  auto s = to_annotated(f.raw, segment_deterministic(f.raw.reasoning), "deterministic");
  classify_chain(s, PhraseTable::defaults(), nullptr);
  return s;
}

AnnotatedSample three_steps() {
  AnnotatedSample s;
  s.base = {"t", "Q?", "First a.\n\nWait b.\n\nThen c.", "42"};
  const char* texts[] = {"First a.", "Wait b.", "Then c."};
  const Pattern pats[] = {Pattern::ProgressiveReasoning, Pattern::Verification, Pattern::ProgressiveReasoning};
  for (std::size_t i = 0; i < 3; ++i) {
    AnnotatedStep st;
    st.index = i;
    st.text = texts[i];
    st.separator = i < 2 ? "\n\n" : "";
    st.pattern = pats[i];
    s.steps.push_back(st);
  }
  return s;
}

TEST(Perplexity, Examples) {
  const double ln2 = std::numbers::ln2;
  EXPECT_DOUBLE_EQ(perplexity(std::vector<double>{-ln2, -ln2}).value, 2.0);
  EXPECT_NEAR(perplexity(std::vector<double>{-ln2, -3 * ln2}).value, 4.0, 1e-12);
  EXPECT_DOUBLE_EQ(perplexity(std::vector<double>{0.0}).value, 1.0);
  EXPECT_EQ(perplexity(std::vector<double>{-1, -2, -3}).token_count, 3u);
  EXPECT_THROW(perplexity(std::vector<double>{}), Error);
}

TEST(Perplexity, AgreesWithOracleOnRandomLogprobs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> lp(1 + rng() % 64);
    for (double& v : lp) v = -static_cast<double>(rng() % 100000) / 10000.0;
    EXPECT_LE(oracle::rel_err(perplexity(lp).value, oracle::perplexity(lp)), 1e-9);
  }
}

TEST(PirValue, ArithmeticCases) {
  EXPECT_NEAR(pir_value({2.0, 1}, {4.0, 1}), std::numbers::ln2, 1e-12);
  EXPECT_EQ(pir_value({3.3, 2}, {3.3, 2}), 0.0);
  EXPECT_LT(pir_value({4.0, 1}, {2.0, 1}), 0.0);
}

TEST(AssembleContext, TemplateAndSplice) {
  const auto s = three_steps();
  ContextTemplate tmpl;
  const auto full = assemble_context(s, std::nullopt, tmpl);
  EXPECT_EQ(full.context, "Q?\n\nFirst a.\n\nWait b.\n\nThen c.\n\nFinal Answer: ");
  EXPECT_EQ(full.continuation, "42");
  const auto without = assemble_context(s, 1, tmpl);
  EXPECT_EQ(without.context, "Q?\n\nFirst a.\n\nThen c.\n\nFinal Answer: ");
  tmpl.prefix = "P:";
  tmpl.answer_lead_in = " => ";
  EXPECT_EQ(assemble_context(s, 2, tmpl).context, "P:Q?\n\nFirst a.\n\nWait b.\n\n => ");
}

TEST(AssembleContext, InvalidRemovals) {
  const auto s = three_steps();
  EXPECT_THROW(assemble_context(s, 3, {}), Error);
  AnnotatedSample one;
  one.base = {"o", "Q", "Only.", "1"};
  one.steps.push_back({0, "Only.", ""});
  EXPECT_THROW(assemble_context(one, 0, {}), DegenerateRemovalError);
  EXPECT_NO_THROW(assemble_context(one, std::nullopt, {}));
}

TEST(Pir, MatchesOracleDefinition) {
  ScoreGateway g(std::make_unique<DeterministicScoreBackend>(9));
  const auto s = three_steps();
  const auto score = pir::pir(s, 1, g, {});
  const double full = oracle::deterministic_perplexity(9, "Q?\n\nFirst a.\n\nWait b.\n\nThen c.\n\nFinal Answer: ", "42");
  const double without = oracle::deterministic_perplexity(9, "Q?\n\nFirst a.\n\nThen c.\n\nFinal Answer: ", "42");
  EXPECT_LE(oracle::rel_err(score.ppl_full.value, full), 1e-12);
  EXPECT_LE(oracle::rel_err(score.ppl_without.value, without), 1e-12);
  EXPECT_NEAR(score.value, std::log(without / full), 1e-12);
}

TEST(Pir, EqualsDifferenceOfMeanLogprobs) {
  ScoreGateway g(std::make_unique<DeterministicScoreBackend>(4));
  const auto s = three_steps();
  const auto full = g.score_continuation(assemble_context(s, std::nullopt, {}));
  const auto without = g.score_continuation(assemble_context(s, 1, {}));
  auto mean = [](const std::vector<double>& v) {
    double t = 0;
    for (double x : v) t += x;
    return t / static_cast<double>(v.size());
  };
  EXPECT_NEAR(pir::pir(s, 1, g, {}).value, mean(full.logprobs) - mean(without.logprobs), 1e-12);
}

TEST(ScoreChain, ContextFreeScoresGiveZeroExactly) {
  ScoreGateway g(std::make_unique<ConstantBackend>());
  for (const auto& f : fixtures::corpus(20)) {
    auto s = labeled(f);
    score_chain(s, g, {});
    for (const auto& st : s.steps) {
      if (st.pir) {
        EXPECT_EQ(*st.pir, 0.0);
      }
    }
  }
}

TEST(ScoreChain, FunctionalStepsOnlyAndCallCount) {
  for (const auto& f : fixtures::corpus(40)) {
    auto s = labeled(f);
    ScoreGateway g(std::make_unique<DeterministicScoreBackend>(0));
    std::size_t functional = 0;
    for (const auto& st : s.steps) functional += is_functional(*st.pattern);
    const auto stats = score_chain(s, g, {});
    EXPECT_EQ(stats.scored, functional);
    EXPECT_EQ(g.counters().backend_calls, functional == 0 ? 0 : functional + 1) << s.base.id;
    for (const auto& st : s.steps) {
      EXPECT_EQ(st.pir.has_value(), is_functional(*st.pattern));
      EXPECT_EQ(st.ppl_without.has_value(), is_functional(*st.pattern));
    }
    EXPECT_EQ(s.ppl_full.has_value(), functional > 0);
    EXPECT_EQ(s.provenance.scorer, "deterministic:deterministic:seed=0");
  }
}

TEST(ScoreChain, ScoresMatchOracleAcrossFanout) {
  const auto corpus = fixtures::corpus(15);
  for (std::size_t fanout : {1u, 4u}) {
    ScoreGateway g(std::make_unique<DeterministicScoreBackend>(2));
    for (const auto& f : corpus) {
      auto s = labeled(f);
      score_chain(s, g, {}, {fanout});
      const auto full = assemble_context(s, std::nullopt, {});
      const double ppl_full = oracle::deterministic_perplexity(2, full.context, full.continuation);
      for (const auto& st : s.steps) {
        if (!st.pir) continue;
        const auto w = assemble_context(s, st.index, {});
        const double ppl_w = oracle::deterministic_perplexity(2, w.context, w.continuation);
        EXPECT_NEAR(*st.pir, std::log(ppl_w / ppl_full), 1e-9);
      }
    }
  }
}

TEST(ScoreChain, FailedAblationLeavesStepUnscored) {
  auto s = three_steps();
  // Every context except the one without step 1 contains "Wait b.".
  ScoreGateway g(std::make_unique<FailingBackend>("Wait b."), {2, 0, std::chrono::milliseconds(0)});
  const auto stats = score_chain(s, g, {});
  EXPECT_EQ(stats.scored, 0u);
  EXPECT_EQ(stats.failed_steps, std::vector<std::size_t>{1});
  EXPECT_FALSE(s.steps[1].pir.has_value());
  EXPECT_TRUE(s.ppl_full.has_value());
}

TEST(ScoreChain, FailedFullScorePropagates) {
  auto s = three_steps();
  ScoreGateway g(std::make_unique<FailingBackend>("never present"), {2, 0, std::chrono::milliseconds(0)});
  EXPECT_THROW(score_chain(s, g, {}), BackendError);
}

TEST(ScoreChain, RejectsUnclassifiedSteps) {
  auto s = three_steps();
  s.steps[2].pattern.reset();
  ScoreGateway g(std::make_unique<DeterministicScoreBackend>(0));
  EXPECT_THROW(score_chain(s, g, {}), Error);
}

TEST(ScoreChain, RescoringReplacesOldScores) {
  auto s = three_steps();
  ScoreGateway a(std::make_unique<DeterministicScoreBackend>(0));
  ScoreGateway b(std::make_unique<DeterministicScoreBackend>(1));
  score_chain(s, a, {});
  const auto first = s.steps[1].pir;
  score_chain(s, b, {});
  EXPECT_NE(s.steps[1].pir, first);
  EXPECT_EQ(s.provenance.scorer, "deterministic:deterministic:seed=1");
}

}  // namespace
