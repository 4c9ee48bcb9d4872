#include "pir/analytics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "pir/errors.hpp"
#include "pir/lm_gateway.hpp"

namespace pir {

using json = nlohmann::json;

namespace {

constexpr bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::size_t whitespace_count(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

// Left-aligns the first `left_cols` columns, right-aligns the rest.
std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows, std::size_t left_cols) {
  std::vector<std::size_t> widths(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) widths[c] = header[c].size();
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) widths[c] = std::max(widths[c], r[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out += " | ";
      out += c < left_cols ? fmt::format("{:<{}}", cells[c], widths[c]) : fmt::format("{:>{}}", cells[c], widths[c]);
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::string out = line(header);
  std::string rule;
  for (std::size_t c = 0; c < widths.size(); ++c) {
    if (c) rule += "-|-";
    rule += std::string(widths[c], '-');
  }
  out += rule + "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

template <class Sample, class StepsFn>
PatternDistribution distribution_of(std::span<const Sample> samples, const TokenCounter& counter,
                                    StepsFn each_step) {
  std::array<std::size_t, 4> tokens{};
  std::vector<std::string> unlabeled;
  for (const auto& s : samples) {
    bool ok = true;
    each_step(s, [&](const AnnotatedStep& st) {
      if (!st.pattern) {
        ok = false;
        return;
      }
      tokens[static_cast<std::size_t>(*st.pattern)] += counter.count(st.text + st.separator);
    });
    if (!ok) unlabeled.push_back(s.source_id());
  }
  if (!unlabeled.empty()) throw ValidationError("samples with unlabeled steps", unlabeled);
  return PatternDistribution::from_counts(samples.size(), tokens);
}

}  // namespace

TokenCounter::TokenCounter(TokenCounterKind kind, ScoreGateway* backend) : kind_(kind), backend_(backend) {
  if (kind_ == TokenCounterKind::Backend && backend_ == nullptr) {
    throw ConfigError("backend token counter requires a scoring backend");
  }
}

std::size_t TokenCounter::count(std::string_view text) const {
  if (text.empty()) return 0;
  if (kind_ == TokenCounterKind::Whitespace) return whitespace_count(text);
  return backend_->score_continuation({"", std::string(text)}).tokens.size();
}

std::size_t count_tokens(std::string_view text, const TokenCounter& counter) { return counter.count(text); }

PatternDistribution PatternDistribution::from_counts(std::size_t samples,
                                                     const std::array<std::size_t, 4>& tokens) {
  PatternDistribution d;
  d.samples = samples;
  d.tokens = tokens;
  for (std::size_t t : tokens) d.total_tokens += t;
  for (std::size_t i = 0; i < 4; ++i) {
    d.shares[i] = d.total_tokens == 0 ? 0.0
                                      : static_cast<double>(tokens[i]) / static_cast<double>(d.total_tokens);
  }
  return d;
}

namespace {

struct AnnotatedView {
  const AnnotatedSample& s;
  const std::string& source_id() const { return s.base.id; }
};
struct RefinedView {
  const RefinedSample& s;
  const std::string& source_id() const { return s.id(); }
};

}  // namespace

PatternDistribution pattern_distribution(std::span<const AnnotatedSample> samples, const TokenCounter& counter) {
  std::vector<AnnotatedView> views;
  views.reserve(samples.size());
  for (const auto& s : samples) views.push_back({s});
  return distribution_of<AnnotatedView>(views, counter, [](const AnnotatedView& v, auto&& visit) {
    for (const auto& st : v.s.steps) visit(st);
  });
}

PatternDistribution pattern_distribution(std::span<const RefinedSample> samples, const TokenCounter& counter) {
  std::vector<RefinedView> views;
  views.reserve(samples.size());
  for (const auto& s : samples) views.push_back({s});
  return distribution_of<RefinedView>(views, counter, [](const RefinedView& v, auto&& visit) {
    for (std::size_t k : v.s.kept) visit(v.s.source.steps.at(k));
  });
}

std::string with_thousands(std::size_t n) {
  std::string digits = std::to_string(n);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i != 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

std::string format_share(double share) { return fmt::format("{:.1f}%", share * 100.0); }

std::vector<std::string> distribution_row_cells(const DatasetRow& row) {
  const auto& d = row.distribution;
  std::vector<std::string> cells{row.dataset, row.source, with_thousands(d.samples),
                                 with_thousands(d.total_tokens)};
  for (Pattern p : kAllPatterns) cells.push_back(format_share(d.share_of(p)));
  return cells;
}

std::string render_distribution_table(std::span<const DatasetRow> rows) {
  std::vector<std::string> header{"Dataset", "Source", "Samples", "Tokens"};
  for (Pattern p : kAllPatterns) header.emplace_back(display_name(p));
  std::vector<std::vector<std::string>> body;
  for (const auto& r : rows) body.push_back(distribution_row_cells(r));
  return render_table(header, body, 2);
}

std::string distribution_to_json(const DatasetRow& row) {
  const auto& d = row.distribution;
  json patterns = json::object();
  for (Pattern p : kAllPatterns) {
    patterns[std::string(to_string(p))] = {{"tokens", d.tokens_of(p)}, {"share", d.share_of(p)}};
  }
  return json{{"dataset", row.dataset},
              {"source", row.source},
              {"samples", d.samples},
              {"tokens", d.total_tokens},
              {"patterns", patterns}}
      .dump(2);
}

std::string render_variant_table(std::span<const VariantRow> rows) {
  std::vector<std::vector<std::string>> body;
  for (const auto& r : rows) {
    body.push_back({r.source, r.data, std::to_string(r.samples), std::to_string(r.tokens)});
  }
  return render_table({"Source", "Data", "Numbers", "Tokens"}, body, 2);
}

EfficiencyReport efficiency(std::span<const EvalRecord> records) {
  if (records.empty()) throw Error("efficiency of an empty record list is undefined");
  std::size_t correct = 0;
  double tokens = 0.0;
  for (const auto& r : records) {
    if (r.response_tokens == 0) throw Error("record " + r.problem_id + " has zero response tokens");
    correct += r.correct ? 1 : 0;
    tokens += static_cast<double>(r.response_tokens);
  }
  const double n = static_cast<double>(records.size());
  EfficiencyReport rep = efficiency(static_cast<double>(correct) / n, tokens / n);
  rep.records = records.size();
  return rep;
}

EfficiencyReport efficiency(double acc, double mean_tokens) {
  if (!(acc >= 0.0 && acc <= 1.0)) throw Error("accuracy must be a fraction in [0, 1]");
  if (!(mean_tokens > 0.0)) throw Error("mean response tokens must be positive");
  return {acc, mean_tokens, acc / mean_tokens, 0};
}

std::string format_scientific(double value) { return fmt::format("{:.2E}", value); }

std::string render_efficiency(const EfficiencyReport& report) {
  return render_table({"Records", "ACC", "TOK", "EFF"},
                      {{std::to_string(report.records), fmt::format("{:.1f}", report.acc * 100.0),
                        with_thousands(static_cast<std::size_t>(report.tok + 0.5)), format_scientific(report.eff)}},
                      0);
}

std::string efficiency_to_json(const EfficiencyReport& report) {
  return json{{"records", report.records}, {"acc", report.acc}, {"tok", report.tok}, {"eff", report.eff}}.dump(2);
}

std::vector<EvalRecord> load_eval_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<EvalRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ParseError(n, "malformed evaluation record");
    EvalRecord r;
    const auto id = j.find("problem_id");
    if (id == j.end()) throw ParseError(n, "missing field 'problem_id'");
    r.problem_id = id->is_string() ? id->get<std::string>() : id->dump();
    const auto correct = j.find("correct");
    if (correct == j.end() || !correct->is_boolean()) throw ParseError(n, "'correct' must be a boolean");
    r.correct = correct->get<bool>();
    const auto tokens = j.find("response_tokens");
    if (tokens == j.end() || !tokens->is_number_integer() || tokens->get<long long>() < 1) {
      throw ParseError(n, "'response_tokens' must be a positive integer");
    }
    r.response_tokens = tokens->get<std::size_t>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace pir
