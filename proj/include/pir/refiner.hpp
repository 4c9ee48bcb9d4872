#pragma once

// Selective pruning: per sample and per functional pattern, drop the
// floor(ratio * n) lowest-PIR steps. Progressive steps are always kept.

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pir/analytics.hpp"
#include "pir/classifier.hpp"
#include "pir/corpus.hpp"
#include "pir/lm_gateway.hpp"
#include "pir/pir_core.hpp"
#include "pir/segmenter.hpp"

namespace pir {

/// Prune ratio per functional pattern, each in [0, 1].
struct PruneRatios {
  double verification = 0.0;
  double multi_method = 0.0;
  double error_correction = 0.0;

  static PruneRatios uniform(double ratio);

  /// Throws ConfigError for ProgressiveReasoning.
  double operator[](Pattern p) const;
  /// Throws ConfigError if any ratio lies outside [0, 1].
  void validate() const;

  bool operator==(const PruneRatios&) const = default;
};

struct RefinementConfig {
  PruneRatios ratios;
  ContextTemplate context;
  DeterministicSegmenterOptions segmenter;
};

/// floor(ratio * n), clamped to [0, n]. Requires 0 <= ratio <= 1.
std::size_t prune_count(std::size_t n_pattern, double ratio);

/// Lowest-PIR steps per functional pattern. Ties on PIR remove the later
/// index first. Unscored steps are never selected.
std::set<std::size_t> select_prune_set(const AnnotatedSample& sample, const PruneRatios& ratios);

/// Splices out `prune_set`. Throws Error on an unknown index or a
/// progressive index.
RefinedSample apply_prune(const AnnotatedSample& sample, const std::set<std::size_t>& prune_set);

struct Backends {
  ScoreGateway* score = nullptr;
  ChatGateway* chat = nullptr;  // optional
};

struct RunOptions {
  std::size_t jobs = 1;
  bool fail_fast = false;
  ScoreChainOptions scoring;
};

struct SampleFailure {
  std::size_t position = 0;  // input order
  std::string id;
  std::string stage;
  std::string message;

  bool operator==(const SampleFailure&) const = default;
};

struct PatternTally {
  std::size_t steps = 0;
  std::size_t removed = 0;
  std::size_t unscored = 0;
};

struct RunReport {
  PruneRatios ratios;
  std::size_t samples = 0;
  std::map<Pattern, PatternTally> patterns;
  std::size_t tokens_before = 0;
  std::size_t tokens_after = 0;
  std::vector<SampleFailure> failures;

  std::size_t total_removed() const;
};

std::string report_to_json(const RunReport& report);
std::string report_to_text(const RunReport& report);

/// Thrown in fail-fast mode; wraps the first sample failure.
class SampleError : public Error {
 public:
  explicit SampleError(SampleFailure failure)
      : Error("sample " + failure.id + " (" + failure.stage + "): " + failure.message),
        failure_(std::move(failure)) {}
  const SampleFailure& failure() const noexcept { return failure_; }

 private:
  SampleFailure failure_;
};

// Individual stages. Each returns records in input order and collects
// per-sample failures unless options.fail_fast is set.

struct StageResult {
  std::vector<AnnotatedSample> samples;
  std::vector<SampleFailure> failures;
};

StageResult segment_dataset(const std::vector<ReasoningSample>& raw, const RefinementConfig& config,
                            ChatGateway* chat, const RunOptions& options);
StageResult classify_dataset(std::vector<AnnotatedSample> samples, const PhraseTable& phrases,
                             ChatGateway* chat, const RunOptions& options);
StageResult score_dataset(std::vector<AnnotatedSample> samples, const RefinementConfig& config,
                          ScoreGateway& score, const RunOptions& options);

struct RefineResult {
  std::vector<RefinedSample> samples;
  RunReport report;
};

/// Pruning of already-scored samples plus the token report.
RefineResult prune_dataset(const std::vector<AnnotatedSample>& scored, const PruneRatios& ratios,
                           const TokenCounter& counter);

/// Segment (raw input) -> classify -> score -> prune.
RefineResult refine_dataset(const std::vector<ReasoningSample>& raw, const RefinementConfig& config,
                            const PhraseTable& phrases, const Backends& backends,
                            const TokenCounter& counter, const RunOptions& options);
RefineResult refine_dataset(std::vector<AnnotatedSample> annotated, const RefinementConfig& config,
                            const PhraseTable& phrases, const Backends& backends,
                            const TokenCounter& counter, const RunOptions& options);

}  // namespace pir
