#pragma once

// Answer perplexity with and without individual reasoning steps, and the
// resulting per-step importance score:
//
//   PPL(R)          = exp(-(1/m) * sum_j log p(a_j | x_1..x_n, a_<j))
//   PPL(R \ {x_i})  = same, conditioned on every step except x_i
//   PIR(x_i)        = ln(PPL(R \ {x_i}) / PPL(R))
//
// A higher value means the answer becomes less likely without the step.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pir/corpus.hpp"
#include "pir/lm_gateway.hpp"

namespace pir {

struct PerplexityValue {
  double value = 1.0;           // > 0
  std::size_t token_count = 0;  // m >= 1
};

struct PirScore {
  std::size_t step_index = 0;
  double value = 0.0;
  PerplexityValue ppl_full;
  PerplexityValue ppl_without;
};

/// exp(-mean(logprobs)). Throws Error on an empty list.
PerplexityValue perplexity(std::span<const double> logprobs);
inline PerplexityValue perplexity(const TokenLogProbs& lp) { return perplexity(lp.logprobs); }

/// ln(without / full).
double pir_value(const PerplexityValue& full, const PerplexityValue& without);

/// How (question, reasoning, answer) is serialized into a scoring request:
///   prefix + question + question_delimiter + reasoning + answer_lead_in
/// with the answer as the continuation.
struct ContextTemplate {
  std::string prefix;
  std::string question_delimiter = "\n\n";
  std::string answer_lead_in = "\n\nFinal Answer: ";

  bool operator==(const ContextTemplate&) const = default;
};

/// Reasoning with step `excluded` spliced out (text and its separator).
std::string splice_without(std::span<const AnnotatedStep> steps, std::optional<std::size_t> excluded);

/// Throws Error on an invalid index and DegenerateRemovalError when the only
/// step of the chain is excluded.
ScoreRequest assemble_context(const AnnotatedSample& sample, std::optional<std::size_t> excluded,
                              const ContextTemplate& tmpl);

PerplexityValue full_perplexity(const AnnotatedSample& sample, ScoreGateway& gateway,
                                const ContextTemplate& tmpl);

/// Scores one step against a precomputed full-chain perplexity.
PirScore pir(const AnnotatedSample& sample, std::size_t step, const PerplexityValue& ppl_full,
             ScoreGateway& gateway, const ContextTemplate& tmpl);

/// Computes PPL(R) itself, then scores `step`.
PirScore pir(const AnnotatedSample& sample, std::size_t step, ScoreGateway& gateway,
             const ContextTemplate& tmpl);

struct ScoreChainOptions {
  /// Concurrent ablation requests per sample (the gateway bounds the total).
  std::size_t fanout = 8;
};

struct ScoreChainStats {
  std::size_t scored = 0;
  std::vector<std::size_t> failed_steps;
  std::vector<std::string> failure_messages;
};

/// Attaches a PIR score to every functional step, none to progressive
/// steps. PPL(R) is computed once, and only if a functional step exists.
/// A failed ablation leaves that step unscored (hence never pruned); a failed
/// PPL(R) propagates.
ScoreChainStats score_chain(AnnotatedSample& sample, ScoreGateway& gateway,
                            const ContextTemplate& tmpl, const ScoreChainOptions& options = {});

}  // namespace pir
