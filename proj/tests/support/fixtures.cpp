#include "fixtures.hpp"

#include <atomic>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "pir/segmenter.hpp"

namespace fixtures {

namespace {

using pir::Pattern;

// No word here is, or is part of, a marker phrase.
const char* const kWords[] = {"the",   "sum",   "of",    "x",      "and",   "y",      "equals", "so",
                              "it",    "gives", "a",     "total",  "value", "square", "root",   "area",
                              "is",    "times", "plus",  "minus",  "half",  "twice",  "result", "term",
                              "side",  "angle", "count", "product", "7",    "12",     "3/4",    "$x^2$"};

const std::vector<std::string>& markers(Pattern p) {
  static const std::map<Pattern, std::vector<std::string>> table = {
      {Pattern::ProgressiveReasoning, {"Let's solve", "First", "Then", "Next", "Therefore", "We need to", "Given that"}},
      {Pattern::Verification, {"Wait", "Let me check", "Let me verify", "Double-check", "Going back to"}},
      {Pattern::MultiMethodValidation,
       {"Alternatively", "Another way", "Let's try a different approach", "Using another method",
        "We can also verify"}},
      {Pattern::ErrorCorrection,
       {"This is wrong", "The mistake was", "That's impossible", "This contradicts", "The error is"}},
  };
  return table.at(p);
}

struct Rng {
  std::mt19937_64 engine;
  // Raw engine output keeps the sequence identical across standard libraries.
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine() % n); }
};

std::string filler(Rng& rng, std::size_t words) {
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) out += ' ';
    out += kWords[rng.below(std::size(kWords))];
  }
  return out;
}

std::string lower_first(std::string s) {
  if (!s.empty() && s[0] >= 'A' && s[0] <= 'Z') s[0] = static_cast<char>(s[0] - 'A' + 'a');
  return s;
}

std::string step_text(Rng& rng, Pattern p) {
  const auto& ph = markers(p);
  const std::string phrase = ph[rng.below(ph.size())];
  std::string first = rng.below(3) == 0 ? "Now, " + lower_first(phrase) : phrase;
  first += " " + filler(rng, 3 + rng.below(8)) + ".";
  const std::size_t extra = rng.below(3);
  for (std::size_t k = 0; k < extra; ++k) {
    first += rng.below(2) ? " " : "\n";
    std::string s = filler(rng, 2 + rng.below(9));
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    first += s + (rng.below(4) == 0 ? "?" : ".");
  }
  return first;
}

}  // namespace

std::vector<Sample> corpus(std::size_t n, std::uint64_t seed) {
  Rng rng{std::mt19937_64(seed)};
  static const char* const kSeparators[] = {"\n\n", "\n\n", "\n\n", "\n\n\n", " \n\n", "\n \n"};
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    const std::size_t steps = 2 + rng.below(7);
    for (std::size_t k = 0; k < steps; ++k) {
      Pattern p = Pattern::ProgressiveReasoning;
      if (k > 0) {
        const std::size_t r = rng.below(10);
        p = r < 4 ? Pattern::ProgressiveReasoning
                  : r < 6 ? Pattern::Verification : r < 8 ? Pattern::MultiMethodValidation : Pattern::ErrorCorrection;
      }
      s.labels.push_back(p);
      s.step_texts.push_back(step_text(rng, p));
      s.separators.push_back(k + 1 < steps ? kSeparators[rng.below(std::size(kSeparators))]
                                           : (rng.below(2) ? "\n" : ""));
    }
    char id[32];
    std::snprintf(id, sizeof id, "fx-%04zu", i);
    s.raw.id = id;
    s.raw.question = "Find the " + filler(rng, 4) + " for case " + std::to_string(i) + ".";
    for (std::size_t k = 0; k < steps; ++k) s.raw.reasoning += s.step_texts[k] + s.separators[k];
    s.raw.answer = std::to_string(rng.below(1000));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<pir::ReasoningSample> raw_of(const std::vector<Sample>& samples) {
  std::vector<pir::ReasoningSample> out;
  for (const auto& s : samples) out.push_back(s.raw);
  return out;
}

std::vector<Pattern> classifier_fixture_labels() {
  std::vector<Pattern> out;
  for (Pattern p : pir::kAllPatterns) out.insert(out.end(), 10, p);
  return out;
}

std::vector<pir::AnnotatedSample> classifier_fixture() {
  Rng rng{std::mt19937_64(7)};
  std::vector<pir::AnnotatedSample> out;
  for (Pattern p : pir::kAllPatterns) {
    pir::AnnotatedSample s;
    s.base.id = std::string("cls-") + std::string(pir::to_string(p));
    s.base.question = "Q";
    s.base.answer = "A";
    const auto& ph = markers(p);
    for (std::size_t k = 0; k < 10; ++k) {
      pir::AnnotatedStep st;
      st.index = k;
      const std::string& phrase = ph[k % ph.size()];
      st.text = (k % 3 == 2 ? "Now, " + lower_first(phrase) : phrase) + " " + filler(rng, 6) + ".";
      st.separator = k + 1 < 10 ? "\n\n" : "";
      s.base.reasoning += st.text + st.separator;
      s.steps.push_back(std::move(st));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<pir::AnnotatedSample> distribution_corpus(std::size_t samples,
                                                      const std::array<std::size_t, 4>& tokens) {
  std::vector<pir::AnnotatedSample> out;
  out.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    pir::AnnotatedSample s;
    s.base.id = "dist-" + std::to_string(i);
    s.base.question = "Q";
    s.base.answer = "A";
    for (Pattern p : pir::kAllPatterns) {
      const std::size_t total = tokens[static_cast<std::size_t>(p)];
      const std::size_t words = total / samples + (i < total % samples ? 1 : 0);
      pir::AnnotatedStep st;
      st.index = s.steps.size();
      st.pattern = p;
      st.method = pir::Method::Rule;
      st.text.reserve(words * 2);
      for (std::size_t w = 0; w < words; ++w) st.text += w ? " w" : "w";
      st.separator = p == Pattern::ErrorCorrection ? "" : "\n\n";
      s.steps.push_back(std::move(st));
    }
    s.base.reasoning = pir::join_steps(s.steps);
    out.push_back(std::move(s));
  }
  return out;
}

std::unique_ptr<pir::ChatBackend> snippet_chat(const std::vector<Sample>& samples) {
  auto replies = std::make_shared<std::map<std::string, std::string>>();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : s.step_texts) {
      std::istringstream words(t);
      std::string w, snippet;
      for (int k = 0; k < 5 && (words >> w); ++k) snippet += (k ? " " : "") + w;
      // Opening words are copied from text that may use "\n" between words;
      // keep them only up to the first line break to stay verbatim.
      const auto cut = t.find('\n');
      if (cut != std::string::npos && cut < snippet.size()) snippet = t.substr(0, cut);
      arr.push_back(snippet);
    }
    // Every 17th sample gets a snippet that cannot be located.
    if (i % 17 == 5) arr.push_back("no such opening words anywhere");
    (*replies)[pir::messages_digest(pir::segmentation_prompt(s.raw))] = arr.dump();
  }
  return std::make_unique<pir::CallbackChatBackend>(
      [replies](std::span<const pir::ChatMessage> m) {
        const auto it = replies->find(pir::messages_digest(m));
        if (it == replies->end()) throw pir::BackendError("no scripted reply");
        return it->second;
      },
      "stub:snippets");
}

std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("pir-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fixtures
