#include "pir/cli.hpp"

#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pir/analytics.hpp"
#include "pir/refiner.hpp"

namespace pir {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

// Every tunable lives in one JSON object. Defaults are overlaid by a config
// file, then by explicitly given flags; the result is what the manifest
// records under "config".
json default_config() {
  return {
      {"ratio", 0.5},
      {"ratio_verification", nullptr},
      {"ratio_multimethod", nullptr},
      {"ratio_errcorr", nullptr},
      {"score_backend", "deterministic"},
      {"score_protocol", "native"},
      {"endpoint", ""},
      {"model", "deterministic"},
      {"seed", 0},
      {"chat_backend", "none"},
      {"chat_endpoint", ""},
      {"chat_model", ""},
      {"chat_replay", ""},
      {"chat_record", ""},
      {"cache_dir", ""},
      {"jobs", 1},
      {"fail_fast", false},
      {"max_in_flight", 8},
      {"retries", 2},
      {"fanout", 8},
      {"token_counter", "whitespace"},
      {"phrases", ""},
      {"min_sentences", 1},
      {"sweep", json::array()},
      {"context", {{"prefix", ""}, {"question_delimiter", "\n\n"}, {"answer_lead_in", "\n\nFinal Answer: "}}},
  };
}

struct UsageError : Error {
  using Error::Error;
};

// Flag values; only those actually given override the config.
struct Flags {
  std::string in, out, config_file, manifest, dataset = "dataset", source = "-", log_level = "warn";
  std::optional<double> ratio, ratio_v, ratio_m, ratio_e;
  std::optional<std::string> score_backend, score_protocol, endpoint, model, chat_backend, chat_endpoint,
      chat_model, chat_replay, chat_record, cache_dir, token_counter, phrases, sweep;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs, max_in_flight, fanout, min_sentences;
  std::optional<int> retries;
  bool fail_fast = false;
};

template <class T>
void overlay(json& cfg, const char* key, const std::optional<T>& value) {
  if (value) cfg[key] = *value;
}

std::vector<double> parse_ratio_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t used = 0;
    double r = 0.0;
    try {
      r = std::stod(item, &used);
    } catch (const std::exception&) {
      throw UsageError("invalid ratio '" + item + "' in --sweep");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos) {
      throw UsageError("invalid ratio '" + item + "' in --sweep");
    }
    out.push_back(r);
  }
  if (out.empty()) throw UsageError("--sweep needs at least one ratio");
  return out;
}

json effective_config(const Flags& f) {
  json cfg = default_config();
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file, std::ios::binary);
    if (!in) throw UsageError("cannot open config file " + f.config_file);
    json file = json::parse(in, nullptr, false);
    if (file.is_discarded() || !file.is_object()) throw UsageError("config file is not a JSON object");
    // A manifest can be fed back as a config file.
    if (file.contains("config") && file["config"].is_object()) file = file["config"];
    // Plain assignment, not merge_patch: null is a meaningful value here.
    for (auto it = file.begin(); it != file.end(); ++it) {
      if (!cfg.contains(it.key())) throw UsageError("unknown config key '" + it.key() + "'");
      if (it->is_object() && cfg[it.key()].is_object()) {
        cfg[it.key()].update(*it);
      } else {
        cfg[it.key()] = *it;
      }
    }
  }
  overlay(cfg, "ratio", f.ratio);
  overlay(cfg, "ratio_verification", f.ratio_v);
  overlay(cfg, "ratio_multimethod", f.ratio_m);
  overlay(cfg, "ratio_errcorr", f.ratio_e);
  overlay(cfg, "score_backend", f.score_backend);
  overlay(cfg, "score_protocol", f.score_protocol);
  overlay(cfg, "endpoint", f.endpoint);
  overlay(cfg, "model", f.model);
  overlay(cfg, "seed", f.seed);
  overlay(cfg, "chat_backend", f.chat_backend);
  overlay(cfg, "chat_endpoint", f.chat_endpoint);
  overlay(cfg, "chat_model", f.chat_model);
  overlay(cfg, "chat_replay", f.chat_replay);
  overlay(cfg, "chat_record", f.chat_record);
  overlay(cfg, "cache_dir", f.cache_dir);
  overlay(cfg, "jobs", f.jobs);
  overlay(cfg, "max_in_flight", f.max_in_flight);
  overlay(cfg, "retries", f.retries);
  overlay(cfg, "fanout", f.fanout);
  overlay(cfg, "token_counter", f.token_counter);
  overlay(cfg, "phrases", f.phrases);
  overlay(cfg, "min_sentences", f.min_sentences);
  if (f.fail_fast) cfg["fail_fast"] = true;
  if (f.sweep) cfg["sweep"] = parse_ratio_list(*f.sweep);
  return cfg;
}

template <class T>
T get(const json& cfg, const char* key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(fmt::format("config key '{}' has the wrong type", key));
  }
}

PruneRatios ratios_from(const json& cfg, std::optional<double> uniform = std::nullopt) {
  const double base = uniform.value_or(get<double>(cfg, "ratio"));
  auto pick = [&](const char* key) { return cfg.at(key).is_null() || uniform ? base : get<double>(cfg, key); };
  PruneRatios r{pick("ratio_verification"), pick("ratio_multimethod"), pick("ratio_errcorr")};
  try {
    r.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return r;
}

RefinementConfig refinement_from(const json& cfg) {
  RefinementConfig rc;
  rc.ratios = ratios_from(cfg);
  const json& ctx = cfg.at("context");
  rc.context.prefix = get<std::string>(ctx, "prefix");
  rc.context.question_delimiter = get<std::string>(ctx, "question_delimiter");
  rc.context.answer_lead_in = get<std::string>(ctx, "answer_lead_in");
  rc.segmenter.min_sentences = get<std::size_t>(cfg, "min_sentences");
  if (rc.segmenter.min_sentences == 0) throw UsageError("min_sentences must be at least 1");
  return rc;
}

RunOptions run_options_from(const json& cfg) {
  RunOptions o;
  o.jobs = get<std::size_t>(cfg, "jobs");
  o.fail_fast = get<bool>(cfg, "fail_fast");
  o.scoring.fanout = get<std::size_t>(cfg, "fanout");
  if (o.jobs == 0 || o.scoring.fanout == 0) throw UsageError("jobs and fanout must be at least 1");
  return o;
}

std::string api_key() {
  const char* key = std::getenv("PIR_API_KEY");
  return key ? key : "";
}

// Gateways and resources shared by the stages of one run.
struct Runtime {
  json config;
  std::shared_ptr<ResponseCache> cache;
  std::unique_ptr<ScoreGateway> score;
  std::unique_ptr<ChatGateway> chat;
  std::optional<PhraseTable> phrases;

  explicit Runtime(json cfg) : config(std::move(cfg)) {
    const auto dir = get<std::string>(config, "cache_dir");
    cache = dir.empty() ? std::make_shared<ResponseCache>() : std::make_shared<ResponseCache>(dir);
  }

  GatewayOptions gateway_options() const {
    GatewayOptions o;
    o.max_in_flight = get<std::size_t>(config, "max_in_flight");
    o.retry_budget = get<int>(config, "retries");
    if (o.max_in_flight == 0 || o.retry_budget < 0) throw UsageError("max_in_flight must be >= 1, retries >= 0");
    return o;
  }

  ScoreGateway& score_gateway() {
    if (score) return *score;
    BackendConfig bc;
    const auto kind = get<std::string>(config, "score_backend");
    if (kind == "deterministic") {
      bc.kind = ScoreBackendKind::Deterministic;
    } else if (kind == "http") {
      bc.kind = ScoreBackendKind::HttpScore;
    } else {
      throw UsageError("score_backend must be 'deterministic' or 'http'");
    }
    const auto protocol = get<std::string>(config, "score_protocol");
    if (protocol == "native") {
      bc.protocol = ScoreProtocol::Native;
    } else if (protocol == "completions") {
      bc.protocol = ScoreProtocol::Completions;
    } else {
      throw UsageError("score_protocol must be 'native' or 'completions'");
    }
    bc.endpoint = get<std::string>(config, "endpoint");
    bc.model_name = get<std::string>(config, "model");
    bc.seed = get<std::uint64_t>(config, "seed");
    bc.api_key = api_key();
    std::unique_ptr<ScoreBackend> backend;
    try {
      backend = make_score_backend(bc);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    score = std::make_unique<ScoreGateway>(std::move(backend), gateway_options(), cache);
    return *score;
  }

  ChatGateway* chat_gateway() {
    if (chat) return chat.get();
    ChatBackendConfig cc;
    const auto kind = get<std::string>(config, "chat_backend");
    if (kind == "none") return nullptr;
    if (kind == "http") {
      cc.kind = ChatBackendKind::Http;
    } else if (kind == "replay") {
      cc.kind = ChatBackendKind::Replay;
    } else {
      throw UsageError("chat_backend must be 'none', 'http' or 'replay'");
    }
    cc.endpoint = get<std::string>(config, "chat_endpoint");
    if (cc.endpoint.empty()) cc.endpoint = get<std::string>(config, "endpoint");
    cc.model_name = get<std::string>(config, "chat_model");
    cc.replay_file = get<std::string>(config, "chat_replay");
    cc.record_file = get<std::string>(config, "chat_record");
    cc.api_key = api_key();
    std::unique_ptr<ChatBackend> backend;
    try {
      backend = make_chat_backend(cc);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    chat = std::make_unique<ChatGateway>(std::move(backend), gateway_options(), cache);
    return chat.get();
  }

  const PhraseTable& phrase_table() {
    if (!phrases) {
      const auto path = get<std::string>(config, "phrases");
      phrases = path.empty() ? PhraseTable::defaults() : PhraseTable::from_file(path);
    }
    return *phrases;
  }

  TokenCounter token_counter() {
    const auto kind = get<std::string>(config, "token_counter");
    if (kind == "whitespace") return TokenCounter(TokenCounterKind::Whitespace);
    if (kind == "backend") return TokenCounter(TokenCounterKind::Backend, &score_gateway());
    throw UsageError("token_counter must be 'whitespace' or 'backend'");
  }
};

json counters_json(const detail::GatewayCore& g) {
  const GatewayCounters c = g.counters();
  return {{"requests", c.requests},
          {"cache_hits", c.cache_hits},
          {"backend_calls", c.backend_calls},
          {"attempts", c.attempts},
          {"failures", c.failures},
          {"cache_hit_rate", c.cache_hit_rate()}};
}

json failures_json(const std::vector<SampleFailure>& failures) {
  json out = json::array();
  for (const auto& f : failures) {
    out.push_back({{"position", f.position}, {"id", f.id}, {"stage", f.stage}, {"message", f.message}});
  }
  return out;
}

// Collects what a run did and writes it next to the primary output.
class Manifest {
 public:
  Manifest(std::string command, const Flags& flags, const json& config)
      : body_{{"command", std::move(command)}, {"config", config}, {"input", flags.in}} {
    body_["outputs"] = json::array();
    body_["timings_ms"] = json::object();
    body_["failures"] = json::array();
    path_ = !flags.manifest.empty() ? flags.manifest : flags.out.empty() ? "" : flags.out + ".manifest.json";
  }

  template <class Fn>
  auto timed(const std::string& stage, Fn&& fn) {
    const auto t0 = Clock::now();
    auto result = fn();
    body_["timings_ms"][stage] = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    return result;
  }

  void output(const std::string& path) { body_["outputs"].push_back(path); }
  void failures(const std::vector<SampleFailure>& f) {
    for (auto& j : failures_json(f)) body_["failures"].push_back(std::move(j));
  }
  void set(const std::string& key, json value) { body_[key] = std::move(value); }

  void write(const Runtime& rt) {
    if (path_.empty()) return;
    json gateways = json::object();
    if (rt.score) gateways["score"] = counters_json(*rt.score);
    if (rt.chat) gateways["chat"] = counters_json(*rt.chat);
    body_["gateways"] = gateways;
    write_text(path_, body_.dump(2) + "\n");
  }

  static void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("failed writing " + path);
  }

 private:
  json body_;
  std::string path_;
};

void require_io(const Flags& f, bool need_out) {
  if (f.in.empty()) throw UsageError("--in is required");
  if (need_out && f.out.empty()) throw UsageError("--out is required");
}

void check_fail_fast(const Runtime& rt, const std::vector<SampleFailure>& failures) {
  if (get<bool>(rt.config, "fail_fast") && !failures.empty()) throw SampleError(failures.front());
}

std::string sweep_path(const std::string& out, double ratio) {
  const std::filesystem::path p(out);
  const std::string name = fmt::format("{}-{}{}", p.stem().string(), ratio, p.extension().string());
  return (p.parent_path() / name).string();
}

json distribution_json(const PatternDistribution& d) {
  json shares = json::object();
  for (Pattern p : kAllPatterns) {
    shares[std::string(to_string(p))] = {{"tokens", d.tokens_of(p)}, {"share", d.share_of(p)}};
  }
  return {{"samples", d.samples}, {"tokens", d.total_tokens}, {"patterns", shares}};
}

// Writes the refined corpus plus its report files, returns the report text.
std::string emit_refined(const RefineResult& result, const std::vector<AnnotatedSample>& scored,
                         const std::string& out, const Flags& flags, const TokenCounter& counter,
                         Manifest& manifest) {
  save_samples(std::span<const RefinedSample>(result.samples), out);
  manifest.output(out);
  const PatternDistribution before = pattern_distribution(std::span<const AnnotatedSample>(scored), counter);
  const PatternDistribution after =
      pattern_distribution(std::span<const RefinedSample>(result.samples), counter);
  json report = json::parse(report_to_json(result.report));
  report["distribution_before"] = distribution_json(before);
  report["distribution_after"] = distribution_json(after);
  const std::string report_path = out + ".report.json";
  Manifest::write_text(report_path, report.dump(2) + "\n");
  manifest.output(report_path);
  const std::vector<DatasetRow> rows{{flags.dataset, "before", before}, {flags.dataset, "after", after}};
  return report_to_text(result.report) + "\n" + render_distribution_table(rows);
}

std::vector<AnnotatedSample> load_annotated_any(const std::string& path) {
  // Refined files carry their annotated source; accept them where annotated
  // input is expected, e.g. re-pruning at another ratio.
  if (detect_schema(path) == Schema::Refined) {
    std::vector<AnnotatedSample> out;
    for (auto& r : load_refined(path)) out.push_back(std::move(r.source));
    return out;
  }
  return load_annotated(path);
}

int cmd_pipeline(const Flags& flags, std::ostream& out) {
  require_io(flags, true);
  Runtime rt(effective_config(flags));
  const RefinementConfig rc = refinement_from(rt.config);
  const RunOptions opts = run_options_from(rt.config);
  const auto sweep = get<std::vector<double>>(rt.config, "sweep");
  for (double r : sweep) ratios_from(rt.config, r);
  Manifest manifest("pipeline", flags, rt.config);
  const TokenCounter counter = rt.token_counter();

  std::vector<SampleFailure> failures;
  std::vector<AnnotatedSample> annotated;
  if (detect_schema(flags.in) == Schema::Raw) {
    const auto raw = manifest.timed("load", [&] { return load_raw(flags.in); });
    StageResult seg = manifest.timed("segment", [&] { return segment_dataset(raw, rc, rt.chat_gateway(), opts); });
    check_fail_fast(rt, seg.failures);
    failures = std::move(seg.failures);
    annotated = std::move(seg.samples);
  } else {
    annotated = manifest.timed("load", [&] { return load_annotated_any(flags.in); });
  }

  // Mirror refine_dataset: only unclassified or not-yet-scored records are touched.
  std::vector<std::size_t> todo_classify, todo_score;
  for (std::size_t i = 0; i < annotated.size(); ++i) {
    if (!annotated[i].fully_classified()) todo_classify.push_back(i);
  }
  auto run_subset = [&](const std::vector<std::size_t>& idx, auto&& stage) {
    std::vector<AnnotatedSample> batch;
    for (std::size_t i : idx) batch.push_back(std::move(annotated[i]));
    StageResult r = stage(std::move(batch));
    for (std::size_t k = 0; k < idx.size(); ++k) annotated[idx[k]] = std::move(r.samples[k]);
    for (auto& f : r.failures) f.position = idx[f.position];
    check_fail_fast(rt, r.failures);
    failures.insert(failures.end(), r.failures.begin(), r.failures.end());
    return 0;
  };
  manifest.timed("classify", [&] {
    return run_subset(todo_classify, [&](std::vector<AnnotatedSample> b) {
      return classify_dataset(std::move(b), rt.phrase_table(), rt.chat_gateway(), opts);
    });
  });
  ScoreGateway& score = rt.score_gateway();
  for (std::size_t i = 0; i < annotated.size(); ++i) {
    if (annotated[i].provenance.scorer != score.identity()) todo_score.push_back(i);
  }
  manifest.timed("score", [&] {
    return run_subset(todo_score,
                      [&](std::vector<AnnotatedSample> b) { return score_dataset(std::move(b), rc, score, opts); });
  });
  std::stable_sort(failures.begin(), failures.end(),
                   [](const SampleFailure& a, const SampleFailure& b) { return a.position < b.position; });
  manifest.failures(failures);

  std::string text;
  if (sweep.empty()) {
    RefineResult result = manifest.timed("prune", [&] { return prune_dataset(annotated, rc.ratios, counter); });
    result.report.failures = failures;
    text = manifest.timed("stats", [&] { return emit_refined(result, annotated, flags.out, flags, counter, manifest); });
  } else {
    std::vector<VariantRow> rows;
    std::size_t before = 0;
    for (const auto& s : annotated) before += counter.count(s.base.reasoning);
    rows.push_back({flags.source, flags.dataset, annotated.size(), before});
    json variants = json::array();
    for (double r : sweep) {
      RefineResult result = manifest.timed(fmt::format("prune-{}", r),
                                           [&] { return prune_dataset(annotated, PruneRatios::uniform(r), counter); });
      result.report.failures = failures;
      const std::string path = sweep_path(flags.out, r);
      emit_refined(result, annotated, path, flags, counter, manifest);
      rows.push_back({flags.source, fmt::format("{}-{}", flags.dataset, r), result.samples.size(),
                      result.report.tokens_after});
      variants.push_back({{"ratio", r}, {"path", path}, {"tokens", result.report.tokens_after}});
    }
    manifest.set("sweep", variants);
    text = render_variant_table(rows);
    const std::string table_path = flags.out + ".sweep.txt";
    Manifest::write_text(table_path, text);
    manifest.output(table_path);
  }
  manifest.write(rt);
  out << text;
  return kExitOk;
}

int cmd_segment(const Flags& flags, std::ostream& out) {
  require_io(flags, true);
  Runtime rt(effective_config(flags));
  const RefinementConfig rc = refinement_from(rt.config);
  const RunOptions opts = run_options_from(rt.config);
  Manifest manifest("segment", flags, rt.config);
  const auto raw = manifest.timed("load", [&] { return load_raw(flags.in); });
  StageResult r = manifest.timed("segment", [&] { return segment_dataset(raw, rc, rt.chat_gateway(), opts); });
  check_fail_fast(rt, r.failures);
  save_samples(std::span<const AnnotatedSample>(r.samples), flags.out);
  manifest.output(flags.out);
  manifest.failures(r.failures);
  manifest.write(rt);
  std::size_t steps = 0;
  for (const auto& s : r.samples) steps += s.steps.size();
  out << fmt::format("segmented {} samples into {} steps ({} failures)\n", r.samples.size(), steps,
                     r.failures.size());
  return kExitOk;
}

int cmd_classify(const Flags& flags, std::ostream& out) {
  require_io(flags, true);
  Runtime rt(effective_config(flags));
  const RunOptions opts = run_options_from(rt.config);
  Manifest manifest("classify", flags, rt.config);
  auto samples = manifest.timed("load", [&] { return load_annotated(flags.in); });
  StageResult r = manifest.timed(
      "classify", [&] { return classify_dataset(std::move(samples), rt.phrase_table(), rt.chat_gateway(), opts); });
  check_fail_fast(rt, r.failures);
  save_samples(std::span<const AnnotatedSample>(r.samples), flags.out);
  manifest.output(flags.out);
  manifest.failures(r.failures);
  manifest.write(rt);
  std::size_t by_method[3] = {0, 0, 0};
  for (const auto& s : r.samples) {
    for (const auto& st : s.steps) {
      if (st.method) ++by_method[static_cast<int>(*st.method)];
    }
  }
  out << fmt::format("classified {} samples: {} by rule, {} by llm, {} defaulted ({} failures)\n",
                     r.samples.size(), by_method[0], by_method[1], by_method[2], r.failures.size());
  return kExitOk;
}

int cmd_score(const Flags& flags, std::ostream& out) {
  require_io(flags, true);
  Runtime rt(effective_config(flags));
  const RefinementConfig rc = refinement_from(rt.config);
  const RunOptions opts = run_options_from(rt.config);
  Manifest manifest("score", flags, rt.config);
  auto samples = manifest.timed("load", [&] { return load_annotated(flags.in); });
  for (const auto& s : samples) {
    if (!s.fully_classified()) throw SchemaError("sample " + s.base.id + " has unclassified steps; run classify first");
  }
  ScoreGateway& score = rt.score_gateway();
  StageResult r = manifest.timed("score", [&] { return score_dataset(std::move(samples), rc, score, opts); });
  check_fail_fast(rt, r.failures);
  save_samples(std::span<const AnnotatedSample>(r.samples), flags.out);
  manifest.output(flags.out);
  manifest.failures(r.failures);
  manifest.write(rt);
  const GatewayCounters c = score.counters();
  out << fmt::format("scored {} samples: {} requests, {} backend calls, cache hit rate {:.3f} ({} failures)\n",
                     r.samples.size(), c.requests, c.backend_calls, c.cache_hit_rate(), r.failures.size());
  return kExitOk;
}

int cmd_prune(const Flags& flags, std::ostream& out) {
  require_io(flags, true);
  Runtime rt(effective_config(flags));
  const RefinementConfig rc = refinement_from(rt.config);
  Manifest manifest("prune", flags, rt.config);
  const auto samples = manifest.timed("load", [&] { return load_annotated_any(flags.in); });
  const TokenCounter counter = rt.token_counter();
  RefineResult result = manifest.timed("prune", [&] { return prune_dataset(samples, rc.ratios, counter); });
  const std::string text =
      manifest.timed("stats", [&] { return emit_refined(result, samples, flags.out, flags, counter, manifest); });
  manifest.write(rt);
  out << text;
  return kExitOk;
}

int cmd_stats(const Flags& flags, std::ostream& out) {
  require_io(flags, false);
  Runtime rt(effective_config(flags));
  Manifest manifest("stats", flags, rt.config);
  const TokenCounter counter = rt.token_counter();
  const PatternDistribution d = manifest.timed("stats", [&] {
    if (detect_schema(flags.in) == Schema::Refined) {
      const auto s = load_refined(flags.in);
      return pattern_distribution(std::span<const RefinedSample>(s), counter);
    }
    const auto s = load_annotated(flags.in);
    return pattern_distribution(std::span<const AnnotatedSample>(s), counter);
  });
  const std::vector<DatasetRow> rows{{flags.dataset, flags.source, d}};
  if (!flags.out.empty()) {
    Manifest::write_text(flags.out, distribution_to_json(rows.front()) + "\n");
    manifest.output(flags.out);
  }
  manifest.write(rt);
  out << render_distribution_table(rows);
  return kExitOk;
}

int cmd_eff(const Flags& flags, std::ostream& out) {
  require_io(flags, false);
  Runtime rt(effective_config(flags));
  Manifest manifest("eff", flags, rt.config);
  const auto records = load_eval_records(flags.in);
  const EfficiencyReport rep = efficiency(std::span<const EvalRecord>(records));
  if (!flags.out.empty()) {
    Manifest::write_text(flags.out, efficiency_to_json(rep) + "\n");
    manifest.output(flags.out);
  }
  manifest.write(rt);
  out << render_efficiency(rep);
  return kExitOk;
}

void add_common(CLI::App& sub, Flags& f) {
  sub.add_option("--in", f.in, "Input JSONL file");
  sub.add_option("--out", f.out, "Output file");
  sub.add_option("--config", f.config_file, "JSON config file, or a manifest from an earlier run");
  sub.add_option("--manifest", f.manifest, "Manifest path (default: <out>.manifest.json)");
  sub.add_option("--ratio", f.ratio, "Prune ratio for every functional pattern");
  sub.add_option("--ratio-verification", f.ratio_v, "Prune ratio for verification steps");
  sub.add_option("--ratio-multimethod", f.ratio_m, "Prune ratio for multi-method validation steps");
  sub.add_option("--ratio-errcorr", f.ratio_e, "Prune ratio for error-correction steps");
  sub.add_option("--score-backend", f.score_backend, "deterministic | http");
  sub.add_option("--score-protocol", f.score_protocol, "native | completions");
  sub.add_option("--endpoint", f.endpoint, "Scoring endpoint URL");
  sub.add_option("--model", f.model, "Scoring model name");
  sub.add_option("--seed", f.seed, "Seed of the deterministic scorer");
  sub.add_option("--chat-backend", f.chat_backend, "none | http | replay");
  sub.add_option("--chat-endpoint", f.chat_endpoint, "Chat endpoint URL (default: --endpoint)");
  sub.add_option("--chat-model", f.chat_model, "Chat model name");
  sub.add_option("--chat-replay", f.chat_replay, "Recorded chat exchanges for the replay backend");
  sub.add_option("--chat-record", f.chat_record, "Append live chat exchanges to this file");
  sub.add_option("--cache-dir", f.cache_dir, "Persistent response cache directory");
  sub.add_option("--jobs", f.jobs, "Samples processed concurrently");
  sub.add_option("--max-in-flight", f.max_in_flight, "Concurrent backend requests per gateway");
  sub.add_option("--retries", f.retries, "Retries per request on transport errors");
  sub.add_option("--fanout", f.fanout, "Concurrent ablations per sample");
  sub.add_flag("--fail-fast", f.fail_fast, "Abort on the first sample failure");
  sub.add_option("--sweep", f.sweep, "Comma-separated ratios; one output per ratio");
  sub.add_option("--token-counter", f.token_counter, "whitespace | backend");
  sub.add_option("--phrases", f.phrases, "Phrase table JSON overriding the built-in one");
  sub.add_option("--min-sentences", f.min_sentences, "Deterministic segmenter: merge shorter paragraphs");
  sub.add_option("--dataset", f.dataset, "Dataset label for tables");
  sub.add_option("--source", f.source, "Source label for tables");
  sub.add_option("--log-level", f.log_level, "trace | debug | info | warn | error | off");
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Perplexity-based pruning of reasoning chains", "pir"};
  app.require_subcommand(1);
  Flags flags;
  using Cmd = int (*)(const Flags&, std::ostream&);
  const std::pair<const char*, std::pair<const char*, Cmd>> commands[] = {
      {"pipeline", {"Segment, classify, score and prune a corpus", cmd_pipeline}},
      {"segment", {"Split raw reasoning into steps", cmd_segment}},
      {"classify", {"Label each step with a cognitive pattern", cmd_classify}},
      {"score", {"Attach perplexity importance scores to functional steps", cmd_score}},
      {"prune", {"Drop the lowest-scoring functional steps", cmd_prune}},
      {"stats", {"Token share per pattern", cmd_stats}},
      {"eff", {"Accuracy, mean tokens and efficiency of evaluation records", cmd_eff}},
  };
  std::vector<std::pair<CLI::App*, Cmd>> subs;
  for (const auto& [name, info] : commands) {
    CLI::App* sub = app.add_subcommand(name, info.first);
    add_common(*sub, flags);
    subs.emplace_back(sub, info.second);
  }

  std::vector<std::string> argv(args.rbegin(), args.rend());  // CLI11 wants reversed order
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("pir", sink);
  logger->set_pattern("[%l] %v");
  logger->set_level(spdlog::level::from_str(flags.log_level));
  const auto previous = spdlog::default_logger();
  spdlog::set_default_logger(logger);
  struct Restore {
    std::shared_ptr<spdlog::logger> p;
    ~Restore() { spdlog::set_default_logger(p); }
  } restore{previous};

  for (const auto& [sub, fn] : subs) {
    if (!sub->parsed()) continue;
    try {
      return fn(flags, out);
    } catch (const UsageError& e) {
      err << "error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return kExitFailure;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitFailure;
    }
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace pir
