#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pir/corpus.hpp"

namespace pir {

class ScoreGateway;

enum class TokenCounterKind { Whitespace, Backend };

/// Counts tokens either as whitespace-separated words or as the tokens the
/// scoring backend reports for the text.
class TokenCounter {
 public:
  TokenCounter() = default;
  explicit TokenCounter(TokenCounterKind kind, ScoreGateway* backend = nullptr);

  std::size_t count(std::string_view text) const;
  TokenCounterKind kind() const noexcept { return kind_; }

 private:
  TokenCounterKind kind_ = TokenCounterKind::Whitespace;
  ScoreGateway* backend_ = nullptr;
};

std::size_t count_tokens(std::string_view text, const TokenCounter& counter = {});

struct PatternDistribution {
  std::size_t samples = 0;
  std::size_t total_tokens = 0;
  std::array<std::size_t, 4> tokens{};  // indexed by Pattern
  std::array<double, 4> shares{};

  std::size_t tokens_of(Pattern p) const { return tokens[static_cast<std::size_t>(p)]; }
  double share_of(Pattern p) const { return shares[static_cast<std::size_t>(p)]; }

  /// Builds a distribution from per-pattern token counts.
  static PatternDistribution from_counts(std::size_t samples, const std::array<std::size_t, 4>& tokens);
};

/// Per-pattern token totals over every step (text + separator). Throws
/// ValidationError naming samples with unlabeled steps.
PatternDistribution pattern_distribution(std::span<const AnnotatedSample> samples,
                                         const TokenCounter& counter = {});
/// Same over the kept steps of refined samples.
PatternDistribution pattern_distribution(std::span<const RefinedSample> samples,
                                         const TokenCounter& counter = {});

struct DatasetRow {
  std::string dataset;
  std::string source;
  PatternDistribution distribution;
};

/// "1,234,567"
std::string with_thousands(std::size_t n);
/// Percentage with one decimal, e.g. "71.4%".
std::string format_share(double share);

/// Cells of one table row, e.g. {"S1K", "Gemini", "1,000", "4,509,505", "71.4%", ...}.
std::vector<std::string> distribution_row_cells(const DatasetRow& row);

/// Aligned text table with the columns
/// Dataset | Source | Samples | Tokens | four pattern shares.
std::string render_distribution_table(std::span<const DatasetRow> rows);
std::string distribution_to_json(const DatasetRow& row);

struct VariantRow {
  std::string source;
  std::string data;  // e.g. "LIMO-0.2"
  std::size_t samples = 0;
  std::size_t tokens = 0;
};

/// Source | Data | Numbers | Tokens, one row per ratio variant.
std::string render_variant_table(std::span<const VariantRow> rows);

struct EvalRecord {
  std::string problem_id;
  bool correct = false;
  std::size_t response_tokens = 1;
};

struct EfficiencyReport {
  double acc = 0.0;  // fraction in [0, 1]
  double tok = 0.0;  // mean response tokens
  double eff = 0.0;  // acc / tok
  std::size_t records = 0;
};

/// Throws Error on an empty list or a record with zero response tokens.
EfficiencyReport efficiency(std::span<const EvalRecord> records);
/// Closed form from aggregate values.
EfficiencyReport efficiency(double acc, double mean_tokens);

/// "5.70E-05"
std::string format_scientific(double value);
std::string render_efficiency(const EfficiencyReport& report);
std::string efficiency_to_json(const EfficiencyReport& report);

/// JSONL of {"problem_id", "correct", "response_tokens"}.
std::vector<EvalRecord> load_eval_records(const std::filesystem::path& path);

}  // namespace pir
