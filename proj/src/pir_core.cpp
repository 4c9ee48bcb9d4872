#include "pir/pir_core.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <mutex>

#include "pir/parallel.hpp"

namespace pir {

PerplexityValue perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw Error("perplexity of an empty continuation is undefined");
  double sum = 0.0;
  for (double lp : logprobs) sum += lp;
  const double mean = sum / static_cast<double>(logprobs.size());
  return {std::exp(-mean), logprobs.size()};
}

double pir_value(const PerplexityValue& full, const PerplexityValue& without) {
  return std::log(without.value / full.value);
}

std::string splice_without(std::span<const AnnotatedStep> steps, std::optional<std::size_t> excluded) {
  std::string out;
  for (const auto& st : steps) {
    if (excluded && st.index == *excluded) continue;
    out += st.text;
    out += st.separator;
  }
  return out;
}

ScoreRequest assemble_context(const AnnotatedSample& sample, std::optional<std::size_t> excluded,
                              const ContextTemplate& tmpl) {
  if (excluded) {
    if (*excluded >= sample.steps.size()) {
      throw Error("step index " + std::to_string(*excluded) + " out of range for sample " + sample.base.id);
    }
    if (sample.steps.size() == 1) {
      throw DegenerateRemovalError("removing the only step of sample " + sample.base.id +
                                   " leaves no reasoning");
    }
  }
  const std::string reasoning =
      excluded ? splice_without(sample.steps, excluded) : join_steps(sample.steps);
  ScoreRequest req;
  req.context.reserve(tmpl.prefix.size() + sample.base.question.size() + reasoning.size() + 64);
  req.context += tmpl.prefix;
  req.context += sample.base.question;
  req.context += tmpl.question_delimiter;
  req.context += reasoning;
  req.context += tmpl.answer_lead_in;
  req.continuation = sample.base.answer;
  return req;
}

PerplexityValue full_perplexity(const AnnotatedSample& sample, ScoreGateway& gateway,
                                const ContextTemplate& tmpl) {
  return perplexity(gateway.score_continuation(assemble_context(sample, std::nullopt, tmpl)));
}

PirScore pir(const AnnotatedSample& sample, std::size_t step, const PerplexityValue& ppl_full,
             ScoreGateway& gateway, const ContextTemplate& tmpl) {
  const PerplexityValue without = perplexity(gateway.score_continuation(assemble_context(sample, step, tmpl)));
  return {step, pir_value(ppl_full, without), ppl_full, without};
}

PirScore pir(const AnnotatedSample& sample, std::size_t step, ScoreGateway& gateway,
             const ContextTemplate& tmpl) {
  if (step >= sample.steps.size()) {
    throw Error("step index " + std::to_string(step) + " out of range for sample " + sample.base.id);
  }
  return pir(sample, step, full_perplexity(sample, gateway, tmpl), gateway, tmpl);
}

ScoreChainStats score_chain(AnnotatedSample& sample, ScoreGateway& gateway, const ContextTemplate& tmpl,
                            const ScoreChainOptions& options) {
  ScoreChainStats stats;
  std::vector<std::size_t> functional;
  for (auto& st : sample.steps) {
    st.pir.reset();
    st.ppl_without.reset();
    if (!st.pattern) throw Error("sample " + sample.base.id + " has unclassified steps");
    if (is_functional(*st.pattern)) functional.push_back(st.index);
  }
  sample.provenance.scorer = gateway.identity();
  sample.ppl_full.reset();
  sample.answer_tokens.reset();
  if (functional.empty()) return stats;

  const PerplexityValue full = full_perplexity(sample, gateway, tmpl);
  sample.ppl_full = full.value;
  sample.answer_tokens = full.token_count;

  std::vector<std::optional<PirScore>> scores(functional.size());
  std::vector<std::string> errors(functional.size());
  parallel_for(functional.size(), options.fanout, [&](std::size_t k) {
    try {
      scores[k] = pir(sample, functional[k], full, gateway, tmpl);
    } catch (const Error& e) {
      errors[k] = e.what();
    }
  });

  for (std::size_t k = 0; k < functional.size(); ++k) {
    auto& st = sample.steps[functional[k]];
    if (scores[k]) {
      st.pir = scores[k]->value;
      st.ppl_without = scores[k]->ppl_without.value;
      ++stats.scored;
    } else {
      spdlog::warn("sample {} step {}: scoring failed, step kept: {}", sample.base.id, functional[k], errors[k]);
      stats.failed_steps.push_back(functional[k]);
      stats.failure_messages.push_back(std::move(errors[k]));
    }
  }
  return stats;
}

}  // namespace pir
