#include "pir/corpus.hpp"

#include <cstdio>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "pir/errors.hpp"

namespace pir {

using json = nlohmann::json;

namespace {

constexpr std::string_view kPatternLabels[] = {
    "progressive_reasoning", "verification", "multi_method_validation", "error_correction"};
constexpr std::string_view kPatternNames[] = {
    "Progressive Reasoning", "Verification", "Multi-method Validation", "Error Correction"};
constexpr std::string_view kMethodLabels[] = {"rule", "llm", "default"};
constexpr std::string_view kSchemaNames[] = {"raw", "annotated", "refined"};

template <class T>
std::optional<T> parse_enum(std::string_view label, std::span<const std::string_view> names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == label) return static_cast<T>(i);
  }
  return std::nullopt;
}

// --- decoding ----------------------------------------------------------------

struct LineContext {
  std::size_t line;  // 1-based
};

const json& require(const json& obj, const char* key, LineContext ctx) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(ctx.line, std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const json& obj, const char* key, LineContext ctx) {
  const json& v = require(obj, key, ctx);
  if (!v.is_string()) throw ParseError(ctx.line, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

template <class T>
std::optional<T> optional_field(const json& obj, const char* key, LineContext ctx) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ParseError(ctx.line, std::string("field '") + key + "' has the wrong type");
  }
}

std::size_t require_index(const json& obj, const char* key, LineContext ctx) {
  const json& v = require(obj, key, ctx);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ParseError(ctx.line, std::string("field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

Pattern decode_pattern(const json& v, LineContext ctx) {
  if (!v.is_string()) throw ParseError(ctx.line, "pattern must be a string");
  auto p = pattern_from_string(v.get<std::string>());
  if (!p) throw ParseError(ctx.line, "unknown pattern '" + v.get<std::string>() + "'");
  return *p;
}

ReasoningSample decode_raw(const json& obj, std::size_t line_index, LineContext ctx) {
  ReasoningSample s;
  auto id = obj.find("id");
  if (id == obj.end() || id->is_null()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu", line_index);
    s.id = buf;
  } else if (id->is_string()) {
    s.id = id->get<std::string>();
  } else if (id->is_number_integer()) {
    s.id = std::to_string(id->get<long long>());
  } else {
    throw ParseError(ctx.line, "field 'id' must be a string or integer");
  }
  s.question = require_string(obj, "question", ctx);
  s.reasoning = require_string(obj, "reasoning", ctx);
  s.answer = require_string(obj, "answer", ctx);
  return s;
}

AnnotatedStep decode_step(const json& obj, LineContext ctx) {
  if (!obj.is_object()) throw ParseError(ctx.line, "step must be an object");
  AnnotatedStep st;
  st.index = require_index(obj, "index", ctx);
  st.text = require_string(obj, "text", ctx);
  st.separator = require_string(obj, "separator", ctx);
  if (auto it = obj.find("pattern"); it != obj.end() && !it->is_null()) {
    st.pattern = decode_pattern(*it, ctx);
  }
  if (auto m = optional_field<std::string>(obj, "method", ctx)) {
    st.method = method_from_string(*m);
    if (!st.method) throw ParseError(ctx.line, "unknown method '" + *m + "'");
  }
  st.matched_phrase = optional_field<std::string>(obj, "matched_phrase", ctx);
  st.pir = optional_field<double>(obj, "pir", ctx);
  st.ppl_without = optional_field<double>(obj, "ppl_without", ctx);
  return st;
}

AnnotatedSample decode_annotated(const json& obj, std::size_t line_index, LineContext ctx) {
  AnnotatedSample s;
  s.base = decode_raw(obj, line_index, ctx);
  const json& steps = require(obj, "steps", ctx);
  if (!steps.is_array()) throw ParseError(ctx.line, "field 'steps' must be an array");
  s.steps.reserve(steps.size());
  for (const auto& st : steps) s.steps.push_back(decode_step(st, ctx));
  if (auto it = obj.find("provenance"); it != obj.end() && it->is_object()) {
    s.provenance.segmenter = it->value("segmenter", "");
    s.provenance.classifier = it->value("classifier", "");
    s.provenance.scorer = it->value("scorer", "");
  }
  s.ppl_full = optional_field<double>(obj, "ppl_full", ctx);
  s.answer_tokens = optional_field<std::size_t>(obj, "answer_tokens", ctx);
  return s;
}

RefinedSample decode_refined(const json& obj, std::size_t line_index, LineContext ctx) {
  RefinedSample r;
  r.source = decode_annotated(obj, line_index, ctx);
  // The file's "reasoning" is the refined text; the original is the join of
  // all steps.
  r.reasoning = r.source.base.reasoning;
  r.source.base.reasoning = join_steps(r.source.steps);
  const json& kept = require(obj, "kept", ctx);
  if (!kept.is_array()) throw ParseError(ctx.line, "field 'kept' must be an array");
  for (const auto& k : kept) {
    if (!k.is_number_unsigned()) throw ParseError(ctx.line, "kept indices must be non-negative integers");
    r.kept.push_back(k.get<std::size_t>());
  }
  const json& removed = require(obj, "removed", ctx);
  if (!removed.is_array()) throw ParseError(ctx.line, "field 'removed' must be an array");
  for (const auto& rm : removed) {
    RemovedStep step;
    step.index = require_index(rm, "index", ctx);
    step.pattern = decode_pattern(require(rm, "pattern", ctx), ctx);
    const json& pir = require(rm, "pir", ctx);
    if (!pir.is_number()) throw ParseError(ctx.line, "removed pir must be a number");
    step.pir = pir.get<double>();
    r.removed.push_back(step);
  }
  return r;
}

Schema schema_of(const json& obj) {
  if (obj.contains("kept")) return Schema::Refined;
  if (obj.contains("steps")) return Schema::Annotated;
  return Schema::Raw;
}

// Reads non-blank lines as JSON objects and hands each to `fn(obj, line_index, ctx)`.
template <class Fn>
void for_each_record(const std::filesystem::path& path, Schema expected, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_index = 0;
  while (std::getline(in, line)) {
    const LineContext ctx{line_index + 1};
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      ++line_index;
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(ctx.line, std::string("malformed record: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(ctx.line, "record must be a JSON object");
    const Schema actual = schema_of(obj);
    if (actual != expected) {
      throw SchemaError(path.string() + " line " + std::to_string(ctx.line) + ": expected " +
                        std::string(to_string(expected)) + " record, got " +
                        std::string(to_string(actual)));
    }
    fn(obj, line_index, ctx);
    ++line_index;
  }
}

template <class T, class IdFn, class BaseFn>
void validate_records(const std::vector<T>& records, IdFn id_of, BaseFn base_of) {
  std::unordered_set<std::string> seen;
  std::vector<std::string> duplicates, empty_answer, empty_reasoning;
  for (const auto& r : records) {
    const std::string& id = id_of(r);
    if (!seen.insert(id).second) duplicates.push_back(id);
    const ReasoningSample& base = base_of(r);
    if (base.answer.empty()) empty_answer.push_back(id);
    if (base.reasoning.empty()) empty_reasoning.push_back(id);
  }
  if (!duplicates.empty()) throw ValidationError("duplicate sample ids", duplicates);
  if (!empty_answer.empty()) throw ValidationError("samples with an empty answer", empty_answer);
  if (!empty_reasoning.empty()) throw ValidationError("samples with empty reasoning", empty_reasoning);
}

// --- encoding ----------------------------------------------------------------

template <class T>
json nullable(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

json encode_step(const AnnotatedStep& st) {
  json out = json::object();
  out["index"] = st.index;
  out["text"] = st.text;
  out["separator"] = st.separator;
  out["pattern"] = st.pattern ? json(std::string(to_string(*st.pattern))) : json(nullptr);
  out["method"] = st.method ? json(std::string(to_string(*st.method))) : json(nullptr);
  out["matched_phrase"] = nullable(st.matched_phrase);
  out["pir"] = nullable(st.pir);
  out["ppl_without"] = nullable(st.ppl_without);
  return out;
}

json encode_raw_json(const ReasoningSample& s) {
  json out = json::object();
  out["id"] = s.id;
  out["question"] = s.question;
  out["reasoning"] = s.reasoning;
  out["answer"] = s.answer;
  return out;
}

json encode_annotated_json(const AnnotatedSample& s) {
  json out = encode_raw_json(s.base);
  json steps = json::array();
  for (const auto& st : s.steps) steps.push_back(encode_step(st));
  out["steps"] = std::move(steps);
  out["provenance"] = {{"segmenter", s.provenance.segmenter},
                       {"classifier", s.provenance.classifier},
                       {"scorer", s.provenance.scorer}};
  out["ppl_full"] = nullable(s.ppl_full);
  out["answer_tokens"] = nullable(s.answer_tokens);
  return out;
}

std::string dump(const json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::strict);
}

template <class T>
void write_records(std::span<const T> samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : samples) {
    out << encode_record(s) << '\n';
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::string_view to_string(Pattern p) noexcept { return kPatternLabels[static_cast<int>(p)]; }
std::string_view display_name(Pattern p) noexcept { return kPatternNames[static_cast<int>(p)]; }
std::optional<Pattern> pattern_from_string(std::string_view label) {
  return parse_enum<Pattern>(label, kPatternLabels);
}

std::string_view to_string(Method m) noexcept { return kMethodLabels[static_cast<int>(m)]; }
std::optional<Method> method_from_string(std::string_view label) {
  return parse_enum<Method>(label, kMethodLabels);
}

std::string_view to_string(Schema s) noexcept { return kSchemaNames[static_cast<int>(s)]; }
std::optional<Schema> schema_from_string(std::string_view name) {
  return parse_enum<Schema>(name, kSchemaNames);
}

bool AnnotatedSample::fully_classified() const noexcept {
  for (const auto& st : steps) {
    if (!st.pattern) return false;
  }
  return true;
}

std::string join_steps(std::span<const AnnotatedStep> steps) {
  std::string out;
  for (const auto& st : steps) {
    out += st.text;
    out += st.separator;
  }
  return out;
}

void check_partition(const AnnotatedSample& sample) {
  for (std::size_t i = 0; i < sample.steps.size(); ++i) {
    if (sample.steps[i].index != i) {
      throw ValidationError("step indices are not 0..n-1", {sample.base.id});
    }
    if (sample.steps[i].text.empty()) {
      throw ValidationError("empty step text", {sample.base.id});
    }
  }
  if (join_steps(sample.steps) != sample.base.reasoning) {
    throw ValidationError("steps do not reassemble the reasoning", {sample.base.id});
  }
}

Schema detect_schema(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json obj = json::parse(line);
      if (!obj.is_object()) throw ParseError(n, "record must be a JSON object");
      return schema_of(obj);
    } catch (const json::parse_error& e) {
      throw ParseError(n, std::string("malformed record: ") + e.what());
    }
  }
  return Schema::Raw;
}

std::vector<ReasoningSample> load_raw(const std::filesystem::path& path) {
  std::vector<ReasoningSample> out;
  for_each_record(path, Schema::Raw, [&](const json& obj, std::size_t idx, LineContext ctx) {
    out.push_back(decode_raw(obj, idx, ctx));
  });
  validate_records(out, [](const ReasoningSample& s) -> const std::string& { return s.id; },
                   [](const ReasoningSample& s) -> const ReasoningSample& { return s; });
  return out;
}

std::vector<AnnotatedSample> load_annotated(const std::filesystem::path& path) {
  std::vector<AnnotatedSample> out;
  for_each_record(path, Schema::Annotated, [&](const json& obj, std::size_t idx, LineContext ctx) {
    out.push_back(decode_annotated(obj, idx, ctx));
  });
  validate_records(out, [](const AnnotatedSample& s) -> const std::string& { return s.base.id; },
                   [](const AnnotatedSample& s) -> const ReasoningSample& { return s.base; });
  for (const auto& s : out) check_partition(s);
  return out;
}

std::vector<RefinedSample> load_refined(const std::filesystem::path& path) {
  std::vector<RefinedSample> out;
  for_each_record(path, Schema::Refined, [&](const json& obj, std::size_t idx, LineContext ctx) {
    out.push_back(decode_refined(obj, idx, ctx));
  });
  validate_records(out, [](const RefinedSample& s) -> const std::string& { return s.id(); },
                   [](const RefinedSample& s) -> const ReasoningSample& { return s.source.base; });
  for (const auto& r : out) {
    check_partition(r.source);
    std::string spliced;
    for (std::size_t k : r.kept) {
      if (k >= r.source.steps.size()) throw ValidationError("kept index out of range", {r.id()});
      spliced += r.source.steps[k].text;
      spliced += r.source.steps[k].separator;
    }
    if (spliced != r.reasoning) {
      throw ValidationError("refined reasoning is not the splice of kept steps", {r.id()});
    }
  }
  return out;
}

std::string encode_record(const ReasoningSample& s) { return dump(encode_raw_json(s)); }

std::string encode_record(const AnnotatedSample& s) { return dump(encode_annotated_json(s)); }

std::string encode_record(const RefinedSample& r) {
  json out = encode_annotated_json(r.source);
  out["reasoning"] = r.reasoning;
  out["kept"] = r.kept;
  json removed = json::array();
  for (const auto& rm : r.removed) {
    removed.push_back({{"index", rm.index}, {"pattern", std::string(to_string(rm.pattern))}, {"pir", rm.pir}});
  }
  out["removed"] = std::move(removed);
  return dump(out);
}

void save_samples(std::span<const ReasoningSample> samples, const std::filesystem::path& path) {
  write_records(samples, path);
}
void save_samples(std::span<const AnnotatedSample> samples, const std::filesystem::path& path) {
  write_records(samples, path);
}
void save_samples(std::span<const RefinedSample> samples, const std::filesystem::path& path) {
  write_records(samples, path);
}

}  // namespace pir
