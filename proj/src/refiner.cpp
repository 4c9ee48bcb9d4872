#include "pir/refiner.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <mutex>

#include <json.hpp>

#include "pir/parallel.hpp"

namespace pir {

using json = nlohmann::json;

PruneRatios PruneRatios::uniform(double ratio) { return {ratio, ratio, ratio}; }

double PruneRatios::operator[](Pattern p) const {
  switch (p) {
    case Pattern::Verification:
      return verification;
    case Pattern::MultiMethodValidation:
      return multi_method;
    case Pattern::ErrorCorrection:
      return error_correction;
    case Pattern::ProgressiveReasoning:
      break;
  }
  throw ConfigError("progressive reasoning has no prune ratio");
}

void PruneRatios::validate() const {
  for (Pattern p : kFunctionalPatterns) {
    const double r = (*this)[p];
    if (!(r >= 0.0 && r <= 1.0)) {
      throw ConfigError(fmt::format("prune ratio for {} must lie in [0, 1], got {}", to_string(p), r));
    }
  }
}

std::size_t prune_count(std::size_t n_pattern, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("prune ratio must lie in [0, 1]");
  // The epsilon absorbs representation error, e.g. 0.29 * 100 = 28.999999999999996.
  const double k = std::floor(ratio * static_cast<double>(n_pattern) + 1e-9);
  return std::min(n_pattern, static_cast<std::size_t>(k));
}

std::set<std::size_t> select_prune_set(const AnnotatedSample& sample, const PruneRatios& ratios) {
  std::set<std::size_t> out;
  for (Pattern pattern : kFunctionalPatterns) {
    std::size_t n = 0;
    std::vector<std::pair<double, std::size_t>> scored;
    for (const auto& st : sample.steps) {
      if (st.pattern != pattern) continue;
      ++n;
      if (st.pir) scored.emplace_back(*st.pir, st.index);
    }
    const std::size_t k = std::min(prune_count(n, ratios[pattern]), scored.size());
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second > b.second;  // later step first on ties
    });
    for (std::size_t i = 0; i < k; ++i) out.insert(scored[i].second);
  }
  return out;
}

RefinedSample apply_prune(const AnnotatedSample& sample, const std::set<std::size_t>& prune_set) {
  for (std::size_t idx : prune_set) {
    if (idx >= sample.steps.size()) {
      throw Error(fmt::format("sample {}: prune index {} does not exist", sample.base.id, idx));
    }
    const auto& st = sample.steps[idx];
    if (!st.pattern || !is_functional(*st.pattern)) {
      throw Error(fmt::format("sample {}: step {} is not a functional step", sample.base.id, idx));
    }
  }
  RefinedSample out;
  out.source = sample;
  for (const auto& st : sample.steps) {
    if (prune_set.contains(st.index)) {
      out.removed.push_back({st.index, *st.pattern, st.pir.value_or(0.0)});
    } else {
      out.kept.push_back(st.index);
      out.reasoning += st.text;
      out.reasoning += st.separator;
    }
  }
  return out;
}

std::size_t RunReport::total_removed() const {
  std::size_t n = 0;
  for (const auto& [p, tally] : patterns) n += tally.removed;
  return n;
}

std::string report_to_json(const RunReport& report) {
  json patterns = json::object();
  for (const auto& [p, t] : report.patterns) {
    patterns[std::string(to_string(p))] = {{"steps", t.steps}, {"removed", t.removed}, {"unscored", t.unscored}};
  }
  json failures = json::array();
  for (const auto& f : report.failures) {
    failures.push_back({{"position", f.position}, {"id", f.id}, {"stage", f.stage}, {"message", f.message}});
  }
  return json{{"ratios",
               {{"verification", report.ratios.verification},
                {"multi_method_validation", report.ratios.multi_method},
                {"error_correction", report.ratios.error_correction}}},
              {"samples", report.samples},
              {"patterns", patterns},
              {"removed", report.total_removed()},
              {"tokens_before", report.tokens_before},
              {"tokens_after", report.tokens_after},
              {"failures", failures}}
      .dump(2);
}

std::string report_to_text(const RunReport& report) {
  std::string out = fmt::format("samples: {}\nratios: verification={} multi_method={} error_correction={}\n",
                                report.samples, report.ratios.verification, report.ratios.multi_method,
                                report.ratios.error_correction);
  for (Pattern p : kAllPatterns) {
    const auto it = report.patterns.find(p);
    const PatternTally t = it == report.patterns.end() ? PatternTally{} : it->second;
    out += fmt::format("  {:<24} steps {:>7}  removed {:>7}  unscored {:>5}\n", display_name(p), t.steps, t.removed,
                       t.unscored);
  }
  const double change = report.tokens_before == 0
                            ? 0.0
                            : 100.0 * (static_cast<double>(report.tokens_after) -
                                       static_cast<double>(report.tokens_before)) /
                                  static_cast<double>(report.tokens_before);
  out += fmt::format("tokens: {} -> {} ({:+.1f}%)\n", report.tokens_before, report.tokens_after, change);
  out += fmt::format("failures: {}\n", report.failures.size());
  for (const auto& f : report.failures) {
    out += fmt::format("  #{} {} [{}] {}\n", f.position, f.id, f.stage, f.message);
  }
  return out;
}

namespace {

// Runs `fn(i)` per sample; a pir::Error becomes a SampleFailure, or a
// SampleError in fail-fast mode. Failures come back in input order.
template <class Fn>
std::vector<SampleFailure> for_each_sample(std::size_t n, const RunOptions& options, std::string_view stage,
                                           const std::vector<std::string>& ids, Fn&& fn) {
  std::vector<std::optional<SampleFailure>> slots(n);
  parallel_for(n, options.jobs, [&](std::size_t i) {
    try {
      fn(i);
    } catch (const SampleError&) {
      throw;
    } catch (const Error& e) {
      SampleFailure f{i, ids[i], std::string(stage), e.what()};
      if (options.fail_fast) throw SampleError(std::move(f));
      spdlog::warn("sample {} failed at {}: {}", ids[i], stage, e.what());
      slots[i] = std::move(f);
    }
  });
  std::vector<SampleFailure> out;
  for (auto& s : slots) {
    if (s) out.push_back(std::move(*s));
  }
  return out;
}

std::vector<std::string> ids_of(const std::vector<AnnotatedSample>& samples) {
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.base.id);
  return ids;
}

void append(std::vector<SampleFailure>& into, std::vector<SampleFailure> more) {
  into.insert(into.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
}

}  // namespace

StageResult segment_dataset(const std::vector<ReasoningSample>& raw, const RefinementConfig& config,
                            ChatGateway* chat, const RunOptions& options) {
  StageResult result;
  result.samples.resize(raw.size());
  std::vector<std::string> ids;
  ids.reserve(raw.size());
  for (const auto& s : raw) ids.push_back(s.id);
  result.failures = for_each_sample(raw.size(), options, "segment", ids, [&](std::size_t i) {
    if (raw[i].reasoning.empty()) throw ValidationError("empty reasoning", {raw[i].id});
    try {
      const SegmentResult seg = segment(raw[i], chat, config.segmenter);
      result.samples[i] = to_annotated(raw[i], seg.chain, seg.method);
    } catch (const Error&) {
      // Keep the record usable downstream; the failure is still reported.
      result.samples[i] =
          to_annotated(raw[i], segment_deterministic(raw[i].reasoning, config.segmenter), "deterministic-fallback");
      throw;
    }
  });
  return result;
}

StageResult classify_dataset(std::vector<AnnotatedSample> samples, const PhraseTable& phrases, ChatGateway* chat,
                             const RunOptions& options) {
  StageResult result;
  const auto ids = ids_of(samples);
  result.failures = for_each_sample(samples.size(), options, "classify", ids, [&](std::size_t i) {
    try {
      classify_chain(samples[i], phrases, chat);
    } catch (const Error&) {
      classify_chain(samples[i], phrases, nullptr);
      throw;
    }
  });
  result.samples = std::move(samples);
  return result;
}

StageResult score_dataset(std::vector<AnnotatedSample> samples, const RefinementConfig& config, ScoreGateway& score,
                          const RunOptions& options) {
  StageResult result;
  const auto ids = ids_of(samples);
  result.failures = for_each_sample(samples.size(), options, "score", ids, [&](std::size_t i) {
    try {
      const ScoreChainStats stats = score_chain(samples[i], score, config.context, options.scoring);
      if (!stats.failed_steps.empty()) {
        throw Error(fmt::format("{} step(s) unscored and kept: {}", stats.failed_steps.size(),
                                stats.failure_messages.front()));
      }
    } catch (const Error&) {
      if (!samples[i].ppl_full) {
        for (auto& st : samples[i].steps) {
          st.pir.reset();
          st.ppl_without.reset();
        }
      }
      throw;
    }
  });
  result.samples = std::move(samples);
  return result;
}

RefineResult prune_dataset(const std::vector<AnnotatedSample>& scored, const PruneRatios& ratios,
                           const TokenCounter& counter) {
  ratios.validate();
  RefineResult result;
  result.report.ratios = ratios;
  result.report.samples = scored.size();
  for (Pattern p : kAllPatterns) result.report.patterns[p] = {};
  result.samples.reserve(scored.size());
  for (const auto& sample : scored) {
    if (!sample.fully_classified()) {
      throw SchemaError("sample " + sample.base.id + " has unclassified steps; run classification first");
    }
    RefinedSample refined = apply_prune(sample, select_prune_set(sample, ratios));
    for (const auto& st : sample.steps) {
      auto& tally = result.report.patterns[*st.pattern];
      ++tally.steps;
      if (is_functional(*st.pattern) && !st.pir) ++tally.unscored;
    }
    for (const auto& rm : refined.removed) ++result.report.patterns[rm.pattern].removed;
    result.report.tokens_before += counter.count(sample.base.reasoning);
    result.report.tokens_after += counter.count(refined.reasoning);
    result.samples.push_back(std::move(refined));
  }
  return result;
}

RefineResult refine_dataset(const std::vector<ReasoningSample>& raw, const RefinementConfig& config,
                            const PhraseTable& phrases, const Backends& backends, const TokenCounter& counter,
                            const RunOptions& options) {
  StageResult seg = segment_dataset(raw, config, backends.chat, options);
  std::vector<SampleFailure> failures = std::move(seg.failures);
  StageResult cls = classify_dataset(std::move(seg.samples), phrases, backends.chat, options);
  append(failures, std::move(cls.failures));
  RefineResult result = refine_dataset(std::move(cls.samples), config, phrases, backends, counter, options);
  append(failures, std::move(result.report.failures));
  std::stable_sort(failures.begin(), failures.end(),
                   [](const SampleFailure& a, const SampleFailure& b) { return a.position < b.position; });
  result.report.failures = std::move(failures);
  return result;
}

RefineResult refine_dataset(std::vector<AnnotatedSample> annotated, const RefinementConfig& config,
                            const PhraseTable& phrases, const Backends& backends, const TokenCounter& counter,
                            const RunOptions& options) {
  if (backends.score == nullptr) throw ConfigError("refinement needs a scoring backend");
  config.ratios.validate();
  std::vector<SampleFailure> failures;

  const auto ids = ids_of(annotated);
  append(failures, for_each_sample(annotated.size(), options, "classify", ids, [&](std::size_t i) {
           if (annotated[i].fully_classified()) return;
           try {
             classify_chain(annotated[i], phrases, backends.chat);
           } catch (const Error&) {
             classify_chain(annotated[i], phrases, nullptr);
             throw;
           }
         }));

  const std::string scorer = backends.score->identity();
  std::vector<std::size_t> to_score;
  for (std::size_t i = 0; i < annotated.size(); ++i) {
    if (annotated[i].provenance.scorer != scorer) to_score.push_back(i);
  }
  if (!to_score.empty()) {
    std::vector<AnnotatedSample> batch;
    batch.reserve(to_score.size());
    for (std::size_t i : to_score) batch.push_back(std::move(annotated[i]));
    StageResult scored = score_dataset(std::move(batch), config, *backends.score, options);
    for (std::size_t k = 0; k < to_score.size(); ++k) annotated[to_score[k]] = std::move(scored.samples[k]);
    for (auto& f : scored.failures) {
      f.position = to_score[f.position];
      failures.push_back(std::move(f));
    }
  }

  RefineResult result = prune_dataset(annotated, config.ratios, counter);
  std::stable_sort(failures.begin(), failures.end(),
                   [](const SampleFailure& a, const SampleFailure& b) { return a.position < b.position; });
  result.report.failures = std::move(failures);
  return result;
}

}  // namespace pir
