#include "pir/lm_gateway.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "pir/digest.hpp"

namespace pir {

using json = nlohmann::json;

namespace {

constexpr bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;  // "" when absent
};

SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint must include a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string path = url.substr(slash);
  if (path == "/") path.clear();
  return {url.substr(0, slash), path};
}

json post_json(const HttpEndpoint& endpoint, const std::string& default_path, const json& body) {
  const SplitUrl url = split_url(endpoint.url);
  httplib::Client client(url.base);
  client.set_connection_timeout(endpoint.timeout);
  client.set_read_timeout(endpoint.timeout);
  client.set_write_timeout(endpoint.timeout);
  httplib::Headers headers;
  if (!endpoint.api_key.empty()) headers.emplace("Authorization", "Bearer " + endpoint.api_key);
  const std::string path = url.path.empty() ? default_path : url.path;
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError("POST " + endpoint.url + ": " + httplib::to_string(res.error()));
  }
  if (res->status >= 500 || res->status == 429) {
    throw TransportError("POST " + endpoint.url + ": HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw BackendError("POST " + endpoint.url + ": HTTP " + std::to_string(res->status) + ": " +
                       res->body.substr(0, 200));
  }
  auto parsed = json::parse(res->body, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) {
    throw ProtocolError("POST " + endpoint.url + ": response is not a JSON object");
  }
  return parsed;
}

// Servers occasionally report tiny positive log-probs from rounding.
double clamp_logprob(double lp) { return (lp > 0.0 && lp <= 1e-6) ? 0.0 : lp; }

std::string encode_logprobs(const TokenLogProbs& lp) {
  return json{{"tokens", lp.tokens}, {"logprobs", lp.logprobs}}.dump(-1, ' ', false,
                                                                    json::error_handler_t::replace);
}

TokenLogProbs decode_logprobs(const std::string& value) {
  const auto j = json::parse(value, nullptr, false);
  if (j.is_discarded() || !j.contains("tokens") || !j.contains("logprobs")) {
    throw ProtocolError("cached score value is malformed");
  }
  TokenLogProbs out;
  out.tokens = j["tokens"].get<std::vector<std::string>>();
  out.logprobs = j["logprobs"].get<std::vector<double>>();
  return out;
}

json messages_json(std::span<const ChatMessage> messages) {
  json arr = json::array();
  for (const auto& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
  return arr;
}

}  // namespace

void validate_logprobs(const TokenLogProbs& result, std::string_view continuation) {
  if (result.tokens.size() != result.logprobs.size()) {
    throw ProtocolError("tokens and logprobs differ in length");
  }
  if (result.tokens.empty()) throw ProtocolError("response carries no tokens");
  std::string joined;
  for (std::size_t i = 0; i < result.tokens.size(); ++i) {
    const double lp = result.logprobs[i];
    if (!std::isfinite(lp) || lp > 0.0) {
      throw ProtocolError("logprob " + std::to_string(i) + " is not a finite value <= 0");
    }
    joined += result.tokens[i];
  }
  if (joined != continuation) throw ProtocolError("tokens do not concatenate to the continuation");
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t j = pos;
    while (j < text.size() && is_space(text[j])) ++j;
    if (j == text.size()) {
      if (tokens.empty()) {
        tokens.emplace_back(text.substr(pos));
      } else {
        tokens.back().append(text.substr(pos));
      }
      break;
    }
    while (j < text.size() && !is_space(text[j])) ++j;
    tokens.emplace_back(text.substr(pos, j - pos));
    pos = j;
  }
  return tokens;
}

// --- deterministic ------------------------------------------------------------

DeterministicScoreBackend::DeterministicScoreBackend(std::uint64_t seed, std::string model)
    : seed_(seed), model_(std::move(model)) {}

double DeterministicScoreBackend::token_logprob(std::uint64_t seed, std::string_view context_digest,
                                                std::string_view token, std::size_t position) {
  std::string buf = std::to_string(seed);
  buf += '\x1f';
  buf += context_digest;
  buf += '\x1f';
  buf += token;
  buf += '\x1f';
  buf += std::to_string(position);
  const std::uint64_t h = fnv1a64(buf);
  return -(1.0 + static_cast<double>(h % 1000) / 1000.0) * std::numbers::ln2;
}

TokenLogProbs DeterministicScoreBackend::score(const ScoreRequest& request) {
  TokenLogProbs out;
  out.tokens = whitespace_tokens(request.continuation);
  const std::string digest = sha256_hex(request.context);
  out.logprobs.reserve(out.tokens.size());
  for (std::size_t j = 0; j < out.tokens.size(); ++j) {
    out.logprobs.push_back(token_logprob(seed_, digest, out.tokens[j], j));
  }
  return out;
}

std::string DeterministicScoreBackend::identity() const {
  return "deterministic:" + model_ + ":seed=" + std::to_string(seed_);
}

// --- http -------------------------------------------------------------------

HttpScoreBackend::HttpScoreBackend(HttpEndpoint endpoint, std::string model, ScoreProtocol protocol)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), protocol_(protocol) {
  split_url(endpoint_.url);
}

TokenLogProbs HttpScoreBackend::score(const ScoreRequest& request) {
  TokenLogProbs out;
  if (protocol_ == ScoreProtocol::Native) {
    const json body{{"model", model_}, {"context", request.context}, {"continuation", request.continuation}};
    const json res = post_json(endpoint_, "/score", body);
    if (!res.contains("tokens") || !res.contains("logprobs") || !res["tokens"].is_array() ||
        !res["logprobs"].is_array()) {
      throw ProtocolError("score response lacks tokens/logprobs");
    }
    try {
      out.tokens = res["tokens"].get<std::vector<std::string>>();
      for (const auto& v : res["logprobs"]) {
        if (!v.is_number()) throw ProtocolError("non-numeric logprob in score response");
        out.logprobs.push_back(clamp_logprob(v.get<double>()));
      }
    } catch (const json::exception& e) {
      throw ProtocolError(std::string("malformed score response: ") + e.what());
    }
    return out;
  }

  // Completions convention: echo the prompt with per-token logprobs and keep
  // the tokens that fall inside the continuation. Token offsets are derived
  // from cumulative token byte lengths.
  const std::string prompt = request.context + request.continuation;
  const json body{{"model", model_}, {"prompt", prompt}, {"max_tokens", 1}, {"echo", true},
                  {"logprobs", 1}, {"temperature", 0}};
  const json res = post_json(endpoint_, "/v1/completions", body);
  const json* lp = nullptr;
  if (res.contains("choices") && res["choices"].is_array() && !res["choices"].empty()) {
    const json& choice = res["choices"][0];
    if (choice.contains("logprobs") && choice["logprobs"].is_object()) lp = &choice["logprobs"];
  }
  if (lp == nullptr || !lp->contains("tokens") || !lp->contains("token_logprobs")) {
    throw ProtocolError("completions response lacks choices[0].logprobs");
  }
  const json& tokens = (*lp)["tokens"];
  const json& logprobs = (*lp)["token_logprobs"];
  if (!tokens.is_array() || !logprobs.is_array() || tokens.size() != logprobs.size()) {
    throw ProtocolError("completions logprobs are malformed");
  }
  const std::size_t context_end = request.context.size();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < tokens.size() && offset < prompt.size(); ++i) {
    if (!tokens[i].is_string()) throw ProtocolError("non-string token in completions response");
    const std::string token = tokens[i].get<std::string>();
    const std::size_t begin = offset;
    offset += token.size();
    if (offset <= context_end) continue;
    if (begin < context_end) throw ProtocolError("a token straddles the context/continuation boundary");
    if (!logprobs[i].is_number()) throw ProtocolError("continuation token without a logprob");
    out.tokens.push_back(token);
    out.logprobs.push_back(clamp_logprob(logprobs[i].get<double>()));
  }
  return out;
}

std::string HttpScoreBackend::identity() const {
  return std::string(protocol_ == ScoreProtocol::Native ? "http_score:" : "completions:") + model_;
}

HttpChatBackend::HttpChatBackend(HttpEndpoint endpoint, std::string model)
    : endpoint_(std::move(endpoint)), model_(std::move(model)) {
  split_url(endpoint_.url);
}

std::string HttpChatBackend::chat(std::span<const ChatMessage> messages) {
  const json body{{"model", model_}, {"messages", messages_json(messages)}, {"temperature", 0}};
  const json res = post_json(endpoint_, "/v1/chat/completions", body);
  try {
    return res.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw ProtocolError("chat response lacks choices[0].message.content");
  }
}

std::string HttpChatBackend::identity() const { return "http_chat:" + model_; }

// --- record / replay ----------------------------------------------------------

std::string messages_digest(std::span<const ChatMessage> messages) {
  return sha256_hex(messages_json(messages).dump());
}

ReplayChatBackend::ReplayChatBackend(const std::filesystem::path& recording) {
  std::ifstream in(recording, std::ios::binary);
  if (!in) throw IoError("cannot open chat recording " + recording.string());
  std::ostringstream whole;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    whole << line << '\n';
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("messages") || !j.contains("reply") || !j["reply"].is_string()) {
      throw ParseError(n, "chat recording entries need 'messages' and 'reply'");
    }
    std::vector<ChatMessage> messages;
    for (const auto& m : j["messages"]) {
      messages.push_back({m.value("role", ""), m.value("content", "")});
    }
    replies_[messages_digest(messages)] = j["reply"].get<std::string>();
  }
  identity_ = "replay:" + sha256_hex(whole.str()).substr(0, 16);
}

std::string ReplayChatBackend::chat(std::span<const ChatMessage> messages) {
  const auto it = replies_.find(messages_digest(messages));
  if (it == replies_.end()) throw BackendError("no recorded reply for this chat request");
  return it->second;
}

std::string ReplayChatBackend::identity() const { return identity_; }

RecordingChatBackend::RecordingChatBackend(std::unique_ptr<ChatBackend> inner,
                                           std::filesystem::path recording)
    : inner_(std::move(inner)), recording_(std::move(recording)) {}

std::string RecordingChatBackend::chat(std::span<const ChatMessage> messages) {
  std::string reply = inner_->chat(messages);
  const json entry{{"messages", messages_json(messages)}, {"reply", reply}};
  std::lock_guard lock(mutex_);
  std::ofstream out(recording_, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to chat recording " + recording_.string());
  out << entry.dump() << '\n';
  return reply;
}

// --- cache ------------------------------------------------------------------

ResponseCache::ResponseCache(std::filesystem::path directory) : dir_(std::move(directory)) {
  std::error_code ec;
  std::filesystem::create_directories(*dir_, ec);
  if (ec) throw IoError("cannot create cache directory " + dir_->string() + ": " + ec.message());
}

std::filesystem::path ResponseCache::file_for(const std::string& key) const {
  return *dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<std::string> ResponseCache::get(const std::string& key) {
  {
    std::shared_lock lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  }
  if (!dir_) return std::nullopt;
  std::ifstream in(file_for(key), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string value = buf.str();
  std::unique_lock lock(mutex_);
  memory_.emplace(key, value);
  return value;
}

void ResponseCache::put(const std::string& key, const std::string& value) {
  {
    std::unique_lock lock(mutex_);
    memory_[key] = value;
  }
  if (!dir_) return;
  const auto target = file_for(key);
  std::error_code ec;
  std::filesystem::create_directories(target.parent_path(), ec);
  std::ostringstream tmp_name;
  tmp_name << key << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id());
  const auto tmp = target.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      spdlog::warn("cache: cannot write {}", tmp.string());
      return;
    }
    out << value;
  }
  std::filesystem::rename(tmp, target, ec);
  if (ec) spdlog::warn("cache: cannot store {}: {}", target.string(), ec.message());
}

// --- gateways ---------------------------------------------------------------

namespace detail {

namespace {

std::size_t checked_slots(const GatewayOptions& options) {
  if (options.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  if (options.retry_budget < 0) throw ConfigError("retry budget must be >= 0");
  return options.max_in_flight;
}

struct SlotGuard {
  explicit SlotGuard(std::counting_semaphore<>& s) : sem(s) { sem.acquire(); }
  ~SlotGuard() { sem.release(); }
  std::counting_semaphore<>& sem;
};

}  // namespace

GatewayCore::GatewayCore(GatewayOptions options, std::shared_ptr<ResponseCache> cache)
    : options_(options),
      cache_(cache ? std::move(cache) : std::make_shared<ResponseCache>()),
      slots_(static_cast<std::ptrdiff_t>(checked_slots(options))) {}

GatewayCounters GatewayCore::counters() const noexcept {
  return {requests_.load(), hits_.load(), calls_.load(), attempts_.load(), failures_.load()};
}

void GatewayCore::reset_counters() noexcept {
  requests_ = 0;
  hits_ = 0;
  calls_ = 0;
  attempts_ = 0;
  failures_ = 0;
}

std::string GatewayCore::run(const std::string& key, const std::function<std::string()>& fetch) {
  ++requests_;
  if (auto cached = cache_->get(key)) {
    ++hits_;
    return *cached;
  }
  std::string value;
  {
    SlotGuard slot(slots_);
    ++calls_;
    for (int attempt = 0;; ++attempt) {
      ++attempts_;
      try {
        value = fetch();
        break;
      } catch (const TransportError& e) {
        if (attempt >= options_.retry_budget) {
          ++failures_;
          throw BackendError(std::string(e.what()) + " (gave up after " + std::to_string(attempt + 1) +
                             " attempts)");
        }
        spdlog::debug("transport failure, retrying: {}", e.what());
        std::this_thread::sleep_for(options_.retry_backoff * (1 << std::min(attempt, 10)));
      } catch (...) {
        ++failures_;
        throw;
      }
    }
  }
  cache_->put(key, value);
  return value;
}

}  // namespace detail

ScoreGateway::ScoreGateway(std::unique_ptr<ScoreBackend> backend, GatewayOptions options,
                           std::shared_ptr<ResponseCache> cache)
    : GatewayCore(options, std::move(cache)), backend_(std::move(backend)) {
  if (!backend_) throw ConfigError("score gateway needs a backend");
}

TokenLogProbs ScoreGateway::score_continuation(const ScoreRequest& request) {
  if (request.continuation.empty()) throw Error("score request with an empty continuation");
  const std::string key = sha256_hex("score\x1f" + backend_->identity() + "\x1f" +
                                     sha256_hex(request.context) + "\x1f" +
                                     sha256_hex(request.continuation));
  const std::string value = run(key, [&] {
    TokenLogProbs lp = backend_->score(request);
    validate_logprobs(lp, request.continuation);
    return encode_logprobs(lp);
  });
  TokenLogProbs out = decode_logprobs(value);
  validate_logprobs(out, request.continuation);
  return out;
}

ChatGateway::ChatGateway(std::unique_ptr<ChatBackend> backend, GatewayOptions options,
                         std::shared_ptr<ResponseCache> cache)
    : GatewayCore(options, std::move(cache)), backend_(std::move(backend)) {
  if (!backend_) throw ConfigError("chat gateway needs a backend");
}

std::string ChatGateway::chat(std::span<const ChatMessage> messages) {
  const std::string key = sha256_hex("chat\x1f" + backend_->identity() + "\x1f" + messages_digest(messages));
  return run(key, [&] { return backend_->chat(messages); });
}

// --- configuration ----------------------------------------------------------

std::unique_ptr<ScoreBackend> make_score_backend(const BackendConfig& config) {
  if (config.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  switch (config.kind) {
    case ScoreBackendKind::Deterministic:
      return std::make_unique<DeterministicScoreBackend>(config.seed, config.model_name);
    case ScoreBackendKind::HttpScore:
      if (config.endpoint.empty()) throw ConfigError("http score backend needs an endpoint");
      return std::make_unique<HttpScoreBackend>(HttpEndpoint{config.endpoint, config.api_key},
                                                config.model_name, config.protocol);
  }
  throw ConfigError("unknown score backend");
}

std::unique_ptr<ChatBackend> make_chat_backend(const ChatBackendConfig& config) {
  switch (config.kind) {
    case ChatBackendKind::None:
      return nullptr;
    case ChatBackendKind::Http: {
      if (config.endpoint.empty()) throw ConfigError("http chat backend needs an endpoint");
      std::unique_ptr<ChatBackend> backend =
          std::make_unique<HttpChatBackend>(HttpEndpoint{config.endpoint, config.api_key}, config.model_name);
      if (!config.record_file.empty()) {
        backend = std::make_unique<RecordingChatBackend>(std::move(backend), config.record_file);
      }
      return backend;
    }
    case ChatBackendKind::Replay:
      if (config.replay_file.empty()) throw ConfigError("replay chat backend needs a recording file");
      return std::make_unique<ReplayChatBackend>(config.replay_file);
  }
  throw ConfigError("unknown chat backend");
}

}  // namespace pir
