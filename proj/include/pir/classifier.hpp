#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pir/corpus.hpp"
#include "pir/lm_gateway.hpp"

namespace pir {

/// Pattern -> marker phrases. Matching is case-insensitive and whole-phrase;
/// hyphens and spaces are interchangeable, curly apostrophes match straight ones.
class PhraseTable {
 public:
  /// Markers for the four cognitive patterns as shipped in
  /// resources/phrases_v1.json.
  static PhraseTable defaults();
  /// Reads {"version": ..., "patterns": {"<label>": ["phrase", ...], ...}}.
  static PhraseTable from_file(const std::filesystem::path& path);
  static PhraseTable from_json(std::string_view json_text);

  void add(Pattern pattern, std::string phrase);
  const std::vector<std::string>& phrases(Pattern pattern) const;
  bool contains(std::string_view phrase) const;
  const std::string& version() const noexcept { return version_; }

 private:
  std::string version_ = "custom";
  std::vector<std::string> phrases_[4];
};

struct RuleMatch {
  Pattern pattern;
  std::string phrase;
};

/// Highest-priority matching pattern
/// (ErrorCorrection > MultiMethodValidation > Verification > ProgressiveReasoning).
/// Within a pattern the earliest occurrence wins, then the longest phrase.
std::optional<RuleMatch> classify_rule(std::string_view step_text, const PhraseTable& phrases);

/// True if `phrase` occurs in `text` delimited by non-word characters.
bool contains_phrase(std::string_view text, std::string_view phrase);

/// Parses a classifier reply against the fixed label vocabulary.
std::optional<Pattern> parse_label(std::string_view reply);

struct StepContext {
  std::string_view question;
  std::string_view previous_step;
  std::string_view step;
  std::string_view next_step;
};

std::vector<ChatMessage> classification_prompt(const StepContext& context, int attempt);

/// Asks the backend for a label, up to `max_attempts` times. Throws
/// ClassificationError if no reply parses, BackendError on transport failure.
Pattern classify_llm(const StepContext& context, ChatGateway& chat, int max_attempts = 3);

struct ClassifyStats {
  std::size_t rule = 0;
  std::size_t llm = 0;
  std::size_t defaulted = 0;
  std::size_t llm_failures = 0;
};

/// Labels every step of `sample` in place: rule phase first, LLM phase for
/// rule misses when `chat` is set, ProgressiveReasoning otherwise. Step text,
/// separators and order are untouched.
ClassifyStats classify_chain(AnnotatedSample& sample, const PhraseTable& phrases,
                             ChatGateway* chat);

}  // namespace pir
