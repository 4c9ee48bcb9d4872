#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "pir/corpus.hpp"
#include "pir/lm_gateway.hpp"

namespace pir {

struct Step {
  std::size_t index = 0;
  std::string text;
  std::string separator;

  bool operator==(const Step&) const = default;
};

struct SegmentedChain {
  std::vector<Step> steps;

  std::string join() const;
};

struct DeterministicSegmenterOptions {
  /// Paragraphs with fewer sentences than this merge into the following one.
  /// 1 keeps every non-empty paragraph as its own step.
  std::size_t min_sentences = 1;
};

/// Blank-line segmentation. Never fails on non-empty input.
SegmentedChain segment_deterministic(std::string_view reasoning,
                                     const DeterministicSegmenterOptions& opts = {});

/// Number of sentences in a paragraph: terminators ('.', '!', '?') followed
/// by whitespace or end of text, plus one for a trailing unterminated run.
std::size_t count_sentences(std::string_view paragraph);

/// Builds the segmentation request for `sample`.
std::vector<ChatMessage> segmentation_prompt(const ReasoningSample& sample);

/// Parses the backend's reply into the list of opening snippets. Accepts a
/// JSON array of strings or one snippet per line (list markers stripped).
std::vector<std::string> parse_snippets(std::string_view reply);

/// Materializes steps by in-order exact search for each snippet.
/// Throws AlignmentError if any snippet cannot be located.
SegmentedChain align_snippets(std::string_view reasoning,
                              const std::vector<std::string>& snippets);

/// LLM segmentation. Throws BackendError or AlignmentError.
SegmentedChain segment_llm(const ReasoningSample& sample, ChatGateway& chat);

struct SegmentResult {
  SegmentedChain chain;
  std::string method;  // "llm", "deterministic" or "deterministic-fallback"
};

/// LLM segmentation when `chat` is non-null, falling back to the
/// deterministic segmenter on alignment failure. Backend errors propagate.
SegmentResult segment(const ReasoningSample& sample, ChatGateway* chat,
                      const DeterministicSegmenterOptions& opts = {});

/// Wraps a segmented chain as an unlabeled annotated sample.
AnnotatedSample to_annotated(const ReasoningSample& sample,
                             const SegmentedChain& chain,
                             std::string segmenter_name);

}  // namespace pir
