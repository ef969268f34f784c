#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>

#include <json.hpp>

#include "gptre/corpus.hpp"
#include "gptre/http.hpp"
#include "gptre/tokens.hpp"
#include "gptre/util.hpp"

namespace gptre {

enum class ProviderKind { mock_oracle, mock_echo, http };

std::string_view to_string(ProviderKind k);
ProviderKind provider_kind_from_string(std::string_view s);

// Decoding settings. Defaults follow the deterministic setup: greedy
// (temperature 0), 256 output tokens, 4,097-token input window.
struct LlmConfig {
  ProviderKind provider = ProviderKind::mock_oracle;
  std::string model_name = "text-davinci-003";
  double temperature = 0.0;
  int max_output_tokens = 256;
  double top_p = 1.0;
  double frequency_penalty = 0.0;
  double presence_penalty = 0.0;
  std::size_t input_budget_tokens = 4097;

  nlohmann::ordered_json to_json() const;
  static LlmConfig from_json(const nlohmann::json& j);
};

class LlmProvider {
 public:
  virtual ~LlmProvider() = default;
  virtual std::string name() const = 0;
  virtual std::string complete(const LlmConfig& config, const std::string& prompt) = 0;
};

class MockEchoProvider : public LlmProvider {
 public:
  std::string name() const override { return "mock_echo"; }
  std::string complete(const LlmConfig&, const std::string& prompt) override { return prompt; }
};

// Answers with the label of the demonstration adjacent to the test block.
class MockOracleProvider : public LlmProvider {
 public:
  explicit MockOracleProvider(std::string null_name = std::string(kDefaultNullName))
      : null_name_(std::move(null_name)) {}
  std::string name() const override { return "mock_oracle"; }
  std::string complete(const LlmConfig& config, const std::string& prompt) override;

 private:
  std::string null_name_;
};

// POST {"model","prompt","temperature","max_tokens","top_p",
// "frequency_penalty","presence_penalty"} -> {"text"}.
class HttpLlmProvider : public LlmProvider {
 public:
  explicit HttpLlmProvider(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string name() const override { return "http"; }
  std::string complete(const LlmConfig& config, const std::string& prompt) override;

 private:
  HttpEndpoint endpoint_;
};

// mock_echo and mock_oracle; http reads GPTRE_LLM_URL / GPTRE_LLM_TOKEN.
std::unique_ptr<LlmProvider> make_provider(ProviderKind kind, std::string_view null_name);

// Reads the last demonstration block of an assembled prompt and returns its
// label verbalization; the NULL sentinel when there are no demonstrations.
// Throws DataError when the prompt does not follow the assembled layout.
std::string mock_oracle_complete(std::string_view prompt, std::string_view null_name = kDefaultNullName);

struct CacheEntry {
  std::string key;
  std::string query;
  std::string completion;
  std::string provider;
  std::string created_at;
};

// One JSON document per key under a directory: <dir>/<key>.json. Writes are
// serialized and atomic; reads may run concurrently.
class CompletionCache {
 public:
  explicit CompletionCache(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }
  std::optional<CacheEntry> get(const std::string& key) const;
  void put(const CacheEntry& entry);

 private:
  std::filesystem::path dir_;
  std::mutex write_mutex_;
};

// Token bucket: `per_minute` requests per minute with a burst of `burst`.
// per_minute == 0 disables limiting.
class TokenBucket {
 public:
  using Clock = std::chrono::steady_clock;

  TokenBucket(double per_minute, double burst);
  // Consumes a token if one is available at `now`; otherwise returns the wait.
  std::optional<Clock::duration> try_acquire(Clock::time_point now);
  void acquire();

 private:
  double per_minute_;
  double burst_;
  double tokens_;
  Clock::time_point last_;
  std::mutex mutex_;
};

struct CompleterOptions {
  RetryPolicy retry;
  Sleeper sleep = real_sleeper();
  std::size_t max_in_flight = 4;
  double requests_per_minute = 0.0;
};

// complete() with budget check, response cache, in-flight deduplication,
// bounded parallelism, rate limiting and retries. Safe for concurrent use.
class Completer {
 public:
  Completer(LlmProvider& provider, LlmConfig config, const TokenEstimator& estimator,
            CompletionCache* cache = nullptr, CompleterOptions options = {});

  const LlmConfig& config() const { return config_; }
  const LlmProvider& provider() const { return provider_; }
  const TokenEstimator& estimator() const { return estimator_; }

  // Throws UsageError when the prompt exceeds the input budget, ProviderError
  // after retries, EmptyCompletionError on a blank response.
  std::string complete(const std::string& prompt);

  // Cache key: hash of provider name, decoding settings and prompt.
  std::string response_key(const std::string& prompt) const;

  std::size_t provider_calls() const { return provider_calls_.load(); }
  std::size_t cache_hits() const { return cache_hits_.load(); }

 private:
  std::string call_provider(const std::string& prompt);

  LlmProvider& provider_;
  LlmConfig config_;
  const TokenEstimator& estimator_;
  CompletionCache* cache_;
  CompleterOptions options_;
  TokenBucket bucket_;
  std::counting_semaphore<1024> slots_;
  std::mutex inflight_mutex_;
  std::map<std::string, std::shared_future<std::string>> inflight_;
  std::atomic<std::size_t> provider_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
};

// Free-function form over a one-off Completer (no cache).
std::string complete(const LlmConfig& config, const std::string& prompt, LlmProvider& provider,
                     const TokenEstimator& estimator);

enum class ParseStatus { exact, normalized, fallback_null };

std::string_view to_string(ParseStatus s);
ParseStatus parse_status_from_string(std::string_view s);

struct Prediction {
  std::string test_id;
  RelationLabel label;
  std::string raw_completion;
  ParseStatus parse_status = ParseStatus::fallback_null;
};

// Ladder on the first non-blank line: exact verbalization, then a unique
// case/punctuation-insensitive whole-word match, else NULL (fallback_null).
Prediction parse_prediction(std::string_view completion, const RelationSchema& schema);

}  // namespace gptre
