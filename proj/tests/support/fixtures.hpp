#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pir/corpus.hpp"
#include "pir/lm_gateway.hpp"

namespace fixtures {

/// A generated sample and the structure it was built from.
struct Sample {
  pir::ReasoningSample raw;
  std::vector<std::string> step_texts;
  std::vector<std::string> separators;
  std::vector<pir::Pattern> labels;
};

/// Seeded corpus of multi-step chains. Paragraph breaks mark step
/// boundaries, step 0 is always progressive and every step carries exactly
/// one marker phrase of its label.
std::vector<Sample> corpus(std::size_t n = 100, std::uint64_t seed = 20240531);

std::vector<pir::ReasoningSample> raw_of(const std::vector<Sample>& samples);

/// Ten steps per pattern, each with one marker phrase, as one annotated
/// sample per pattern block (unlabeled).
std::vector<pir::AnnotatedSample> classifier_fixture();
/// The expected label of every step in classifier_fixture(), in order.
std::vector<pir::Pattern> classifier_fixture_labels();

/// Annotated, labeled samples whose whitespace token counts per pattern sum
/// exactly to `tokens` (indexed by Pattern).
std::vector<pir::AnnotatedSample> distribution_corpus(std::size_t samples, const std::array<std::size_t, 4>& tokens);

/// Chat stub that answers segmentation prompts with the opening words of each
/// generated step, so the LLM segmenter can run offline.
std::unique_ptr<pir::ChatBackend> snippet_chat(const std::vector<Sample>& samples);

/// Fresh, empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

std::string read_file(const std::filesystem::path& path);

}  // namespace fixtures
