#include "pir/classifier.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pir/errors.hpp"
#include "pir/resources.hpp"

namespace pir {

namespace {

constexpr Pattern kPriority[] = {Pattern::ErrorCorrection, Pattern::MultiMethodValidation,
                                 Pattern::Verification, Pattern::ProgressiveReasoning};

constexpr bool is_word_char(unsigned char c) noexcept {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Lower-cases ASCII, folds curly single quotes to '\'' and hyphens to spaces.
std::string normalize(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (c == 0xE2 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80 &&
        (static_cast<unsigned char>(s[i + 2]) == 0x98 || static_cast<unsigned char>(s[i + 2]) == 0x99)) {
      out.push_back('\'');
      i += 2;
    } else if (c == '-') {
      out.push_back(' ');
    } else if (c >= 'A' && c <= 'Z') {
      out.push_back(static_cast<char>(c - 'A' + 'a'));
    } else {
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

std::optional<std::size_t> find_normalized(std::string_view text, std::string_view phrase) {
  if (phrase.empty()) return std::nullopt;
  std::size_t pos = text.find(phrase);
  while (pos != std::string_view::npos) {
    const bool left_ok = pos == 0 || !is_word_char(static_cast<unsigned char>(text[pos - 1]));
    const std::size_t end = pos + phrase.size();
    const bool right_ok = end == text.size() || !is_word_char(static_cast<unsigned char>(text[end]));
    if (left_ok && right_ok) return pos;
    pos = text.find(phrase, pos + 1);
  }
  return std::nullopt;
}

std::string_view trim_label_noise(std::string_view s) {
  auto noise = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '"' || c == '\'' || c == '`' ||
           c == '*' || c == '.' || c == ',' || c == ':' || c == '[' || c == ']';
  };
  while (!s.empty() && noise(s.front())) s.remove_prefix(1);
  while (!s.empty() && noise(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace

PhraseTable PhraseTable::defaults() { return from_json(resources::phrases_v1()); }

PhraseTable PhraseTable::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open phrase table " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

PhraseTable PhraseTable::from_json(std::string_view json_text) {
  const auto doc = nlohmann::json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ConfigError("phrase table is not a JSON object");
  auto patterns = doc.find("patterns");
  if (patterns == doc.end() || !patterns->is_object()) {
    throw ConfigError("phrase table lacks a 'patterns' object");
  }
  PhraseTable table;
  table.version_ = doc.value("version", "custom");
  for (const auto& [label, list] : patterns->items()) {
    const auto pattern = pattern_from_string(label);
    if (!pattern) throw ConfigError("phrase table: unknown pattern '" + label + "'");
    if (!list.is_array()) throw ConfigError("phrase table: '" + label + "' must be a list");
    for (const auto& phrase : list) {
      if (!phrase.is_string() || phrase.get<std::string>().empty()) {
        throw ConfigError("phrase table: '" + label + "' holds a non-string or empty phrase");
      }
      table.add(*pattern, phrase.get<std::string>());
    }
  }
  return table;
}

void PhraseTable::add(Pattern pattern, std::string phrase) {
  phrases_[static_cast<std::size_t>(pattern)].push_back(std::move(phrase));
}

const std::vector<std::string>& PhraseTable::phrases(Pattern pattern) const {
  return phrases_[static_cast<std::size_t>(pattern)];
}

bool PhraseTable::contains(std::string_view phrase) const {
  for (const auto& list : phrases_) {
    if (std::find(list.begin(), list.end(), phrase) != list.end()) return true;
  }
  return false;
}

bool contains_phrase(std::string_view text, std::string_view phrase) {
  return find_normalized(normalize(text), normalize(phrase)).has_value();
}

std::optional<RuleMatch> classify_rule(std::string_view step_text, const PhraseTable& phrases) {
  const std::string text = normalize(step_text);
  for (Pattern pattern : kPriority) {
    const std::string* best = nullptr;
    std::size_t best_pos = 0;
    for (const auto& phrase : phrases.phrases(pattern)) {
      const std::string needle = normalize(phrase);
      const auto pos = find_normalized(text, needle);
      if (!pos) continue;
      if (best == nullptr || *pos < best_pos || (*pos == best_pos && phrase.size() > best->size())) {
        best = &phrase;
        best_pos = *pos;
      }
    }
    if (best != nullptr) return RuleMatch{pattern, *best};
  }
  return std::nullopt;
}

std::optional<Pattern> parse_label(std::string_view reply) {
  const std::string spaced = normalize(trim_label_noise(reply));
  std::string joined = spaced;
  std::replace(joined.begin(), joined.end(), ' ', '_');
  if (auto p = pattern_from_string(joined)) return p;

  // A longer reply counts only if it names exactly one label.
  std::optional<Pattern> found;
  for (Pattern p : kAllPatterns) {
    const std::string label(to_string(p));
    std::string label_spaced = label;
    std::replace(label_spaced.begin(), label_spaced.end(), '_', ' ');
    if (find_normalized(spaced, label) || find_normalized(spaced, label_spaced)) {
      if (found) return std::nullopt;
      found = p;
    }
  }
  return found;
}

std::vector<ChatMessage> classification_prompt(const StepContext& context, int attempt) {
  std::string content = resources::render(resources::classify_prompt_v1(),
                                          {{"question", context.question},
                                           {"previous_step", context.previous_step},
                                           {"step", context.step},
                                           {"next_step", context.next_step}});
  if (attempt > 0) {
    content += "\n\nYour previous answer was not one of the four labels. Reply with the label only.";
    if (attempt > 1) content += " (attempt " + std::to_string(attempt + 1) + ")";
  }
  return {{"user", std::move(content)}};
}

Pattern classify_llm(const StepContext& context, ChatGateway& chat, int max_attempts) {
  std::string last;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    last = chat.chat(classification_prompt(context, attempt));
    if (auto label = parse_label(last)) return *label;
  }
  throw ClassificationError("no valid label after " + std::to_string(max_attempts) +
                            " attempts; last reply: \"" + last.substr(0, 80) + "\"");
}

ClassifyStats classify_chain(AnnotatedSample& sample, const PhraseTable& phrases, ChatGateway* chat) {
  ClassifyStats stats;
  auto& steps = sample.steps;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    auto& step = steps[i];
    step.matched_phrase.reset();
    if (auto match = classify_rule(step.text, phrases)) {
      step.pattern = match->pattern;
      step.method = Method::Rule;
      step.matched_phrase = std::move(match->phrase);
      ++stats.rule;
      continue;
    }
    if (chat == nullptr) {
      step.pattern = Pattern::ProgressiveReasoning;
      step.method = Method::Default;
      ++stats.defaulted;
      continue;
    }
    const StepContext ctx{sample.base.question, i > 0 ? std::string_view(steps[i - 1].text) : "",
                          step.text, i + 1 < steps.size() ? std::string_view(steps[i + 1].text) : ""};
    try {
      step.pattern = classify_llm(ctx, *chat);
      step.method = Method::Llm;
      ++stats.llm;
    } catch (const ClassificationError& e) {
      spdlog::warn("sample {} step {}: {}; labeling as progressive_reasoning", sample.base.id, i, e.what());
      step.pattern = Pattern::ProgressiveReasoning;
      step.method = Method::Default;
      ++stats.llm_failures;
      ++stats.defaulted;
    }
  }
  sample.provenance.classifier = "rules:" + phrases.version();
  if (chat != nullptr) sample.provenance.classifier += "+llm:" + chat->identity();
  return stats;
}

}  // namespace pir
