#pragma once

// Data model and line-delimited JSON storage for raw, annotated and refined
// reasoning corpora.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pir {

enum class Pattern {
  ProgressiveReasoning,
  Verification,
  MultiMethodValidation,
  ErrorCorrection,
};

inline constexpr Pattern kAllPatterns[] = {
    Pattern::ProgressiveReasoning, Pattern::Verification,
    Pattern::MultiMethodValidation, Pattern::ErrorCorrection};

/// Patterns that are candidates for pruning.
inline constexpr Pattern kFunctionalPatterns[] = {
    Pattern::Verification, Pattern::MultiMethodValidation,
    Pattern::ErrorCorrection};

constexpr bool is_functional(Pattern p) noexcept {
  return p != Pattern::ProgressiveReasoning;
}

/// Wire label: "progressive_reasoning", "verification",
/// "multi_method_validation", "error_correction".
std::string_view to_string(Pattern p) noexcept;
std::optional<Pattern> pattern_from_string(std::string_view label);
/// Human-readable column title, e.g. "Multi-method Validation".
std::string_view display_name(Pattern p) noexcept;

/// How a step got its label. `Default` means a rule miss with no chat
/// backend configured.
enum class Method { Rule, Llm, Default };

std::string_view to_string(Method m) noexcept;
std::optional<Method> method_from_string(std::string_view label);

struct ReasoningSample {
  std::string id;
  std::string question;
  std::string reasoning;
  std::string answer;

  bool operator==(const ReasoningSample&) const = default;
};

struct AnnotatedStep {
  std::size_t index = 0;
  std::string text;
  std::string separator;  // trailing whitespace owned by this step
  std::optional<Pattern> pattern;
  std::optional<Method> method;
  std::optional<std::string> matched_phrase;
  std::optional<double> pir;
  std::optional<double> ppl_without;

  bool operator==(const AnnotatedStep&) const = default;
};

struct Provenance {
  std::string segmenter;
  std::string classifier;
  std::string scorer;

  bool operator==(const Provenance&) const = default;
};

struct AnnotatedSample {
  ReasoningSample base;
  std::vector<AnnotatedStep> steps;
  Provenance provenance;
  std::optional<double> ppl_full;
  std::optional<std::size_t> answer_tokens;

  bool operator==(const AnnotatedSample&) const = default;

  bool fully_classified() const noexcept;
};

struct RemovedStep {
  std::size_t index = 0;
  Pattern pattern = Pattern::Verification;
  double pir = 0.0;

  bool operator==(const RemovedStep&) const = default;
};

struct RefinedSample {
  AnnotatedSample source;
  std::string reasoning;  // refined text
  std::vector<RemovedStep> removed;
  std::vector<std::size_t> kept;

  bool operator==(const RefinedSample&) const = default;

  const std::string& id() const noexcept { return source.base.id; }
};

enum class Schema { Raw, Annotated, Refined };

std::string_view to_string(Schema s) noexcept;
std::optional<Schema> schema_from_string(std::string_view name);

/// Concatenation of text + separator over all steps.
std::string join_steps(std::span<const AnnotatedStep> steps);

/// Throws ValidationError if the steps do not partition `reasoning`
/// byte-exactly or the indices are not 0..n-1.
void check_partition(const AnnotatedSample& sample);

/// Schema of the first record in the file; Raw for an empty file.
Schema detect_schema(const std::filesystem::path& path);

std::vector<ReasoningSample> load_raw(const std::filesystem::path& path);
std::vector<AnnotatedSample> load_annotated(const std::filesystem::path& path);
std::vector<RefinedSample> load_refined(const std::filesystem::path& path);

void save_samples(std::span<const ReasoningSample> samples,
                  const std::filesystem::path& path);
void save_samples(std::span<const AnnotatedSample> samples,
                  const std::filesystem::path& path);
void save_samples(std::span<const RefinedSample> samples,
                  const std::filesystem::path& path);

/// Single-record encoders, exposed for byte-level comparisons in tools.
std::string encode_record(const ReasoningSample& s);
std::string encode_record(const AnnotatedSample& s);
std::string encode_record(const RefinedSample& s);

}  // namespace pir
