#include "pir/segmenter.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

#include <json.hpp>

#include "pir/errors.hpp"
#include "pir/resources.hpp"

namespace pir {

namespace {

constexpr bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Splits `span` into (text, trailing whitespace). Whitespace-only spans keep
// everything as text so that no step is empty.
Step make_step(std::size_t index, std::string_view span) {
  std::size_t end = span.size();
  while (end > 0 && is_space(span[end - 1])) --end;
  if (end == 0) return {index, std::string(span), {}};
  return {index, std::string(span.substr(0, end)), std::string(span.substr(end))};
}

bool strip_prefix(std::string_view& s, std::string_view prefix) {
  if (!s.starts_with(prefix)) return false;
  s.remove_prefix(prefix.size());
  return true;
}

// "1. ", "2) ", "- ", "* ", "• "
std::string_view strip_list_marker(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
  if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) {
    s.remove_prefix(i + 1);
    return trim(s);
  }
  if (strip_prefix(s, "- ") || strip_prefix(s, "* ") || strip_prefix(s, "• ")) return trim(s);
  return s;
}

std::string_view strip_quotes(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  if (strip_prefix(s, "“")) {
    if (s.ends_with("”")) s.remove_suffix(std::string_view("”").size());
  }
  return s;
}

}  // namespace

std::string SegmentedChain::join() const {
  std::string out;
  for (const auto& st : steps) {
    out += st.text;
    out += st.separator;
  }
  return out;
}

std::size_t count_sentences(std::string_view paragraph) {
  std::size_t count = 0;
  bool pending = false;  // non-space content since the last terminator
  for (std::size_t i = 0; i < paragraph.size(); ++i) {
    const char c = paragraph[i];
    const bool terminator = c == '.' || c == '!' || c == '?';
    if (terminator && (i + 1 == paragraph.size() || is_space(paragraph[i + 1]))) {
      ++count;
      pending = false;
    } else if (!is_space(c)) {
      pending = true;
    }
  }
  return count + (pending ? 1 : 0);
}

SegmentedChain segment_deterministic(std::string_view reasoning,
                                     const DeterministicSegmenterOptions& opts) {
  SegmentedChain chain;
  if (reasoning.empty()) return chain;

  // Paragraph spans: [begin, end) of text followed by its separator run.
  struct Para {
    std::size_t begin, text_end, sep_end;
  };
  std::vector<Para> paras;
  std::size_t begin = 0;
  std::size_t i = 0;
  while (i < reasoning.size()) {
    if (!is_space(reasoning[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    std::size_t newlines = 0;
    while (j < reasoning.size() && is_space(reasoning[j])) {
      if (reasoning[j] == '\n') ++newlines;
      ++j;
    }
    const bool leading = i == 0;
    const bool trailing = j == reasoning.size();
    if (newlines >= 2 && !leading && !trailing) {
      paras.push_back({begin, i, j});
      begin = j;
    }
    i = j;
  }
  {
    std::size_t text_end = reasoning.size();
    while (text_end > begin && is_space(reasoning[text_end - 1])) --text_end;
    if (text_end == begin) text_end = reasoning.size();  // whitespace only
    paras.push_back({begin, text_end, reasoning.size()});
  }

  // Merge short paragraphs forward.
  std::vector<Para> merged;
  for (std::size_t k = 0; k < paras.size(); ++k) {
    Para p = paras[k];
    while (k + 1 < paras.size() &&
           count_sentences(reasoning.substr(p.begin, p.text_end - p.begin)) < opts.min_sentences) {
      ++k;
      p.text_end = paras[k].text_end;
      p.sep_end = paras[k].sep_end;
    }
    merged.push_back(p);
  }

  chain.steps.reserve(merged.size());
  for (const auto& p : merged) {
    chain.steps.push_back({chain.steps.size(),
                           std::string(reasoning.substr(p.begin, p.text_end - p.begin)),
                           std::string(reasoning.substr(p.text_end, p.sep_end - p.text_end))});
  }
  return chain;
}

std::vector<ChatMessage> segmentation_prompt(const ReasoningSample& sample) {
  return {{"user", resources::render(resources::segment_prompt_v1(),
                                     {{"question", sample.question}, {"reasoning", sample.reasoning}})}};
}

std::vector<std::string> parse_snippets(std::string_view reply) {
  std::vector<std::string> out;
  const auto open = reply.find('[');
  const auto close = reply.rfind(']');
  if (open != std::string_view::npos && close != std::string_view::npos && close > open) {
    const auto parsed = nlohmann::json::parse(reply.substr(open, close - open + 1), nullptr, false);
    if (parsed.is_array() && !parsed.empty() &&
        std::all_of(parsed.begin(), parsed.end(), [](const auto& v) { return v.is_string(); })) {
      for (const auto& v : parsed) out.push_back(v.get<std::string>());
      return out;
    }
  }
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    auto nl = reply.find('\n', pos);
    if (nl == std::string_view::npos) nl = reply.size();
    std::string_view line = trim(reply.substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty() || line.starts_with("```")) continue;
    line = trim(strip_quotes(strip_list_marker(line)));
    if (!line.empty()) out.emplace_back(line);
  }
  return out;
}

SegmentedChain align_snippets(std::string_view reasoning, const std::vector<std::string>& snippets) {
  if (snippets.empty()) throw AlignmentError("no snippets returned");
  std::vector<std::size_t> starts;
  starts.reserve(snippets.size());
  std::size_t cursor = 0;
  for (const auto& raw : snippets) {
    const std::string_view snippet = trim(raw);
    if (snippet.empty()) throw AlignmentError("empty snippet");
    const auto pos = reasoning.find(snippet, cursor);
    if (pos == std::string_view::npos) {
      throw AlignmentError("snippet not found in order: \"" + std::string(snippet) + "\"");
    }
    starts.push_back(pos);
    cursor = pos + snippet.size();
  }
  // Anything before the first snippet belongs to the first step.
  starts.front() = 0;

  SegmentedChain chain;
  chain.steps.reserve(starts.size());
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const std::size_t end = k + 1 < starts.size() ? starts[k + 1] : reasoning.size();
    chain.steps.push_back(make_step(k, reasoning.substr(starts[k], end - starts[k])));
  }
  return chain;
}

SegmentedChain segment_llm(const ReasoningSample& sample, ChatGateway& chat) {
  const auto messages = segmentation_prompt(sample);
  const std::string reply = chat.chat(messages);
  return align_snippets(sample.reasoning, parse_snippets(reply));
}

SegmentResult segment(const ReasoningSample& sample, ChatGateway* chat,
                      const DeterministicSegmenterOptions& opts) {
  if (chat != nullptr) {
    try {
      return {segment_llm(sample, *chat), "llm:" + chat->identity()};
    } catch (const AlignmentError& e) {
      spdlog::warn("sample {}: LLM segmentation unalignable ({}); using blank-line segmentation",
                   sample.id, e.what());
      return {segment_deterministic(sample.reasoning, opts), "deterministic-fallback"};
    }
  }
  return {segment_deterministic(sample.reasoning, opts), "deterministic"};
}

AnnotatedSample to_annotated(const ReasoningSample& sample, const SegmentedChain& chain,
                             std::string segmenter_name) {
  AnnotatedSample out;
  out.base = sample;
  out.provenance.segmenter = std::move(segmenter_name);
  out.steps.reserve(chain.steps.size());
  for (const auto& st : chain.steps) {
    AnnotatedStep a;
    a.index = st.index;
    a.text = st.text;
    a.separator = st.separator;
    out.steps.push_back(std::move(a));
  }
  return out;
}

}  // namespace pir
