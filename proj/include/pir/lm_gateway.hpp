#pragma once

// Access to external language-model services: continuation log-prob scoring
// and chat completions. Every call goes through a gateway that consults a
// content-addressed cache, bounds in-flight requests and retries transport
// failures.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pir/errors.hpp"

namespace pir {

struct ScoreRequest {
  std::string context;
  std::string continuation;  // non-empty
};

/// Natural-log probabilities, one per continuation token.
struct TokenLogProbs {
  std::vector<std::string> tokens;
  std::vector<double> logprobs;

  bool operator==(const TokenLogProbs&) const = default;
};

struct ChatMessage {
  std::string role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

/// Retryable failure raised by backends (connection refused, 5xx, 429).
/// The gateway turns it into BackendError once the retry budget is spent.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Throws ProtocolError unless tokens and logprobs have equal length, every
/// logprob is finite and <= 0, and the tokens concatenate to `continuation`.
void validate_logprobs(const TokenLogProbs& result, std::string_view continuation);

// --- backends ---------------------------------------------------------------

class ScoreBackend {
 public:
  virtual ~ScoreBackend() = default;
  virtual TokenLogProbs score(const ScoreRequest& request) = 0;
  /// Stable identity used in cache keys (kind, model, seed).
  virtual std::string identity() const = 0;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string chat(std::span<const ChatMessage> messages) = 0;
  virtual std::string identity() const = 0;
};

/// Splits text into whitespace-led tokens: each token is a run of
/// non-whitespace together with the whitespace preceding it. Leading
/// whitespace of the text joins the first token, trailing whitespace the last.
std::vector<std::string> whitespace_tokens(std::string_view text);

/// Offline scorer. The logprob of token t at position j is
///   -(1 + (h mod 1000) / 1000) * ln 2,
/// h = FNV-1a-64 of "<seed>\x1f<sha256-hex(context)>\x1f<t>\x1f<j>", with j the
/// 0-based token position and numbers in decimal. Tokens come from
/// whitespace_tokens().
class DeterministicScoreBackend final : public ScoreBackend {
 public:
  explicit DeterministicScoreBackend(std::uint64_t seed, std::string model = "deterministic");

  TokenLogProbs score(const ScoreRequest& request) override;
  std::string identity() const override;

  static double token_logprob(std::uint64_t seed, std::string_view context_digest,
                              std::string_view token, std::size_t position);

 private:
  std::uint64_t seed_;
  std::string model_;
};

enum class ScoreProtocol {
  Native,       // POST {model, context, continuation} -> {tokens, logprobs}
  Completions,  // POST /v1/completions, prompt echoed with per-token logprobs
};

struct HttpEndpoint {
  std::string url;  // scheme://host[:port][/path]
  std::string api_key;
  std::chrono::milliseconds timeout{60000};
};

class HttpScoreBackend final : public ScoreBackend {
 public:
  HttpScoreBackend(HttpEndpoint endpoint, std::string model, ScoreProtocol protocol);

  TokenLogProbs score(const ScoreRequest& request) override;
  std::string identity() const override;

 private:
  HttpEndpoint endpoint_;
  std::string model_;
  ScoreProtocol protocol_;
};

/// OpenAI-style /v1/chat/completions with temperature 0.
class HttpChatBackend final : public ChatBackend {
 public:
  HttpChatBackend(HttpEndpoint endpoint, std::string model);

  std::string chat(std::span<const ChatMessage> messages) override;
  std::string identity() const override;

 private:
  HttpEndpoint endpoint_;
  std::string model_;
};

/// Serves replies from a recorded JSONL file of {"messages": [...], "reply": "..."}.
/// A request without a recording raises BackendError.
class ReplayChatBackend final : public ChatBackend {
 public:
  explicit ReplayChatBackend(const std::filesystem::path& recording);

  std::string chat(std::span<const ChatMessage> messages) override;
  std::string identity() const override;

  std::size_t size() const noexcept { return replies_.size(); }

 private:
  std::unordered_map<std::string, std::string> replies_;
  std::string identity_;
};

/// Decorator appending every exchange to a JSONL recording that
/// ReplayChatBackend can read back.
class RecordingChatBackend final : public ChatBackend {
 public:
  RecordingChatBackend(std::unique_ptr<ChatBackend> inner, std::filesystem::path recording);

  std::string chat(std::span<const ChatMessage> messages) override;
  std::string identity() const override { return inner_->identity(); }

 private:
  std::unique_ptr<ChatBackend> inner_;
  std::filesystem::path recording_;
  std::mutex mutex_;
};

/// Backend driven by a callable. Used for stubs.
class CallbackChatBackend final : public ChatBackend {
 public:
  using Fn = std::function<std::string(std::span<const ChatMessage>)>;
  CallbackChatBackend(Fn fn, std::string identity) : fn_(std::move(fn)), identity_(std::move(identity)) {}

  std::string chat(std::span<const ChatMessage> messages) override { return fn_(messages); }
  std::string identity() const override { return identity_; }

 private:
  Fn fn_;
  std::string identity_;
};

/// Canonical digest of a message list (used for cache and replay keys).
std::string messages_digest(std::span<const ChatMessage> messages);

// --- cache ------------------------------------------------------------------

/// Content-addressed store. Values live in memory and, when a directory is
/// given, as `<dir>/<key[0:2]>/<key>.json`. Writes are atomic renames, so
/// concurrent writers of one key leave one complete value. No eviction.
class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(std::filesystem::path directory);

  std::optional<std::string> get(const std::string& key);
  void put(const std::string& key, const std::string& value);

  const std::optional<std::filesystem::path>& directory() const noexcept { return dir_; }

 private:
  std::filesystem::path file_for(const std::string& key) const;

  std::optional<std::filesystem::path> dir_;
  std::shared_mutex mutex_;
  std::unordered_map<std::string, std::string> memory_;
};

// --- gateways ---------------------------------------------------------------

struct GatewayOptions {
  std::size_t max_in_flight = 8;
  int retry_budget = 2;  // attempts = 1 + retry_budget
  std::chrono::milliseconds retry_backoff{200};
};

struct GatewayCounters {
  std::uint64_t requests = 0;       // calls made on the gateway
  std::uint64_t cache_hits = 0;
  std::uint64_t backend_calls = 0;  // requests that reached the backend
  std::uint64_t attempts = 0;       // including retries
  std::uint64_t failures = 0;

  double cache_hit_rate() const noexcept {
    return requests == 0 ? 0.0 : static_cast<double>(cache_hits) / static_cast<double>(requests);
  }
};

namespace detail {

class GatewayCore {
 public:
  GatewayCore(GatewayOptions options, std::shared_ptr<ResponseCache> cache);

  GatewayCounters counters() const noexcept;
  void reset_counters() noexcept;
  const GatewayOptions& options() const noexcept { return options_; }

 protected:
  /// Cache lookup, then a bounded, retried call of `fetch`, which returns the
  /// serialized value to cache. Only TransportError is retried.
  std::string run(const std::string& key, const std::function<std::string()>& fetch);

 private:
  GatewayOptions options_;
  std::shared_ptr<ResponseCache> cache_;
  std::counting_semaphore<> slots_;
  std::atomic<std::uint64_t> requests_{0}, hits_{0}, calls_{0}, attempts_{0}, failures_{0};
};

}  // namespace detail

class ScoreGateway : public detail::GatewayCore {
 public:
  ScoreGateway(std::unique_ptr<ScoreBackend> backend, GatewayOptions options = {},
               std::shared_ptr<ResponseCache> cache = std::make_shared<ResponseCache>());

  /// Per-token natural-log probabilities of `request.continuation` given
  /// `request.context`. Cache key: (identity, sha256(context), sha256(continuation)).
  TokenLogProbs score_continuation(const ScoreRequest& request);

  std::string identity() const { return backend_->identity(); }

 private:
  std::unique_ptr<ScoreBackend> backend_;
};

class ChatGateway : public detail::GatewayCore {
 public:
  ChatGateway(std::unique_ptr<ChatBackend> backend, GatewayOptions options = {},
              std::shared_ptr<ResponseCache> cache = std::make_shared<ResponseCache>());

  std::string chat(std::span<const ChatMessage> messages);

  std::string identity() const { return backend_->identity(); }

 private:
  std::unique_ptr<ChatBackend> backend_;
};

// --- configuration ----------------------------------------------------------

enum class ScoreBackendKind { Deterministic, HttpScore };

struct BackendConfig {
  ScoreBackendKind kind = ScoreBackendKind::Deterministic;
  std::string endpoint;
  std::string model_name = "deterministic";
  ScoreProtocol protocol = ScoreProtocol::Native;
  std::size_t max_in_flight = 8;
  int retry_budget = 2;
  std::uint64_t seed = 0;
  std::string api_key;
};

enum class ChatBackendKind { None, Http, Replay };

struct ChatBackendConfig {
  ChatBackendKind kind = ChatBackendKind::None;
  std::string endpoint;
  std::string model_name;
  std::filesystem::path replay_file;
  std::filesystem::path record_file;  // optional; wraps Http in a recorder
  std::size_t max_in_flight = 8;
  int retry_budget = 2;
  std::string api_key;
};

/// Throws ConfigError on an inconsistent config (e.g. http without endpoint).
std::unique_ptr<ScoreBackend> make_score_backend(const BackendConfig& config);
std::unique_ptr<ChatBackend> make_chat_backend(const ChatBackendConfig& config);

}  // namespace pir
