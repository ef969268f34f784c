#include "gptre/llm.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <thread>

#include "gptre/errors.hpp"
#include "gptre/prompt.hpp"

namespace gptre {

std::string_view to_string(ProviderKind k) {
  switch (k) {
    case ProviderKind::mock_oracle: return "mock_oracle";
    case ProviderKind::mock_echo: return "mock_echo";
    case ProviderKind::http: return "http";
  }
  return "mock_oracle";
}

ProviderKind provider_kind_from_string(std::string_view s) {
  if (s == "mock_oracle") return ProviderKind::mock_oracle;
  if (s == "mock_echo") return ProviderKind::mock_echo;
  if (s == "http") return ProviderKind::http;
  throw UsageError("unknown provider '" + std::string(s) + "'");
}

nlohmann::ordered_json LlmConfig::to_json() const {
  nlohmann::ordered_json j;
  j["provider"] = std::string(gptre::to_string(provider));
  j["model_name"] = model_name;
  j["temperature"] = temperature;
  j["max_output_tokens"] = max_output_tokens;
  j["top_p"] = top_p;
  j["frequency_penalty"] = frequency_penalty;
  j["presence_penalty"] = presence_penalty;
  j["input_budget_tokens"] = input_budget_tokens;
  return j;
}

LlmConfig LlmConfig::from_json(const nlohmann::json& j) {
  LlmConfig c;
  c.provider = provider_kind_from_string(j.value("provider", std::string(gptre::to_string(c.provider))));
  c.model_name = j.value("model_name", c.model_name);
  c.temperature = j.value("temperature", c.temperature);
  c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
  c.top_p = j.value("top_p", c.top_p);
  c.frequency_penalty = j.value("frequency_penalty", c.frequency_penalty);
  c.presence_penalty = j.value("presence_penalty", c.presence_penalty);
  c.input_budget_tokens = j.value("input_budget_tokens", c.input_budget_tokens);
  return c;
}

std::string MockOracleProvider::complete(const LlmConfig&, const std::string& prompt) {
  return mock_oracle_complete(prompt, null_name_);
}

std::string HttpLlmProvider::complete(const LlmConfig& config, const std::string& prompt) {
  nlohmann::ordered_json body;
  body["model"] = config.model_name;
  body["prompt"] = prompt;
  body["temperature"] = config.temperature;
  body["max_tokens"] = config.max_output_tokens;
  body["top_p"] = config.top_p;
  body["frequency_penalty"] = config.frequency_penalty;
  body["presence_penalty"] = config.presence_penalty;
  const auto response = post_json(endpoint_, body);
  if (!response.contains("text") || !response.at("text").is_string()) {
    throw ProviderError("completion response lacks a \"text\" string");
  }
  return response.at("text").get<std::string>();
}

std::unique_ptr<LlmProvider> make_provider(ProviderKind kind, std::string_view null_name) {
  switch (kind) {
    case ProviderKind::mock_oracle: return std::make_unique<MockOracleProvider>(std::string(null_name));
    case ProviderKind::mock_echo: return std::make_unique<MockEchoProvider>();
    case ProviderKind::http:
      return std::make_unique<HttpLlmProvider>(HttpEndpoint::from_env("GPTRE_LLM_URL", "GPTRE_LLM_TOKEN"));
  }
  throw UsageError("unknown provider");
}

namespace {

std::vector<std::string_view> split_blocks(std::string_view text) {
  std::vector<std::string_view> blocks;
  const auto sep = layout::kBlockSeparator;
  std::size_t start = 0;
  for (auto pos = text.find(sep); pos != std::string_view::npos; pos = text.find(sep, start)) {
    blocks.push_back(text.substr(start, pos - start));
    start = pos + sep.size();
  }
  blocks.push_back(text.substr(start));
  return blocks;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

}  // namespace

std::string mock_oracle_complete(std::string_view prompt, std::string_view null_name) {
  const auto blocks = split_blocks(prompt);
  if (blocks.size() < 2) throw DataError("mock oracle: prompt has no test block");
  const std::string test = trim(blocks.back());
  if (!starts_with(test, layout::kContextPrefix) || test.size() < layout::kAnswerCue.size() ||
      test.substr(test.size() - layout::kAnswerCue.size()) != layout::kAnswerCue) {
    throw DataError("mock oracle: final block is not a test block");
  }
  // blocks[0] is the instructions; demonstrations sit between it and the test block.
  if (blocks.size() == 2) return std::string(null_name);
  const std::string_view last_demo = blocks[blocks.size() - 2];
  if (!starts_with(last_demo, layout::kContextPrefix)) throw DataError("mock oracle: malformed demonstration block");

  std::size_t line_start = 0;
  while (line_start <= last_demo.size()) {
    auto line_end = last_demo.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = last_demo.size();
    const std::string_view line = last_demo.substr(line_start, line_end - line_start);
    if (starts_with(line, layout::kRelationPrefix)) {
      const auto cue = line.rfind("'" + std::string(layout::kAnswerCue) + " ");
      if (cue == std::string_view::npos || line.back() != '.') break;
      const auto label_begin = cue + layout::kAnswerCue.size() + 2;
      return std::string(line.substr(label_begin, line.size() - 1 - label_begin));
    }
    line_start = line_end + 1;
  }
  throw DataError("mock oracle: demonstration block has no label line");
}

CompletionCache::CompletionCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::optional<CacheEntry> CompletionCache::get(const std::string& key) const {
  const auto path = dir_ / (key + ".json");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("key").get<std::string>() != key) return std::nullopt;
    return CacheEntry{j.at("key").get<std::string>(), j.at("query").get<std::string>(),
                      j.at("completion").get<std::string>(), j.at("provider").get<std::string>(),
                      j.value("created_at", std::string())};
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt cache entry " + path.string() + ": " + e.what());
  }
}

void CompletionCache::put(const CacheEntry& entry) {
  nlohmann::ordered_json j;
  j["key"] = entry.key;
  j["query"] = entry.query;
  j["completion"] = entry.completion;
  j["provider"] = entry.provider;
  j["created_at"] = entry.created_at;
  std::lock_guard lock(write_mutex_);
  write_file_atomic(dir_ / (entry.key + ".json"), j.dump(2) + "\n");
}

TokenBucket::TokenBucket(double per_minute, double burst)
    : per_minute_(per_minute), burst_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)), last_(Clock::now()) {}

std::optional<TokenBucket::Clock::duration> TokenBucket::try_acquire(Clock::time_point now) {
  if (per_minute_ <= 0.0) return std::nullopt;
  std::lock_guard lock(mutex_);
  if (now > last_) {
    const double elapsed_min = std::chrono::duration<double, std::ratio<60>>(now - last_).count();
    tokens_ = std::min(burst_, tokens_ + elapsed_min * per_minute_);
    last_ = now;
  }
  if (tokens_ >= 1.0) {
    tokens_ -= 1.0;
    return std::nullopt;
  }
  const double missing_min = (1.0 - tokens_) / per_minute_;
  return std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double, std::ratio<60>>(missing_min));
}

void TokenBucket::acquire() {
  while (auto wait = try_acquire(Clock::now())) std::this_thread::sleep_for(*wait);
}

Completer::Completer(LlmProvider& provider, LlmConfig config, const TokenEstimator& estimator,
                     CompletionCache* cache, CompleterOptions options)
    : provider_(provider),
      config_(std::move(config)),
      estimator_(estimator),
      cache_(cache),
      options_(std::move(options)),
      bucket_(options_.requests_per_minute, std::max<double>(1.0, static_cast<double>(options_.max_in_flight))),
      slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(options_.max_in_flight, 1, 1024))) {}

std::string Completer::response_key(const std::string& prompt) const {
  nlohmann::ordered_json material = config_.to_json();
  material.erase("input_budget_tokens");
  material["provider_name"] = provider_.name();
  return sha256_hex(material.dump() + "\n" + prompt);
}

std::string Completer::call_provider(const std::string& prompt) {
  slots_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{slots_};
  return with_retries(
      options_.retry,
      [&] {
        bucket_.acquire();
        ++provider_calls_;
        return provider_.complete(config_, prompt);
      },
      options_.sleep);
}

std::string Completer::complete(const std::string& prompt) {
  const std::size_t estimate = estimator_.estimate(prompt);
  if (estimate > config_.input_budget_tokens) {
    throw UsageError("prompt estimate " + std::to_string(estimate) + " exceeds the input budget of " +
                     std::to_string(config_.input_budget_tokens) + " tokens");
  }
  // Only greedy decoding is deterministic enough to reuse responses.
  const bool cacheable = config_.temperature == 0.0;
  const std::string key = response_key(prompt);
  if (cacheable && cache_) {
    if (auto hit = cache_->get(key)) {
      ++cache_hits_;
      return hit->completion;
    }
  }

  std::promise<std::string> promise;
  {
    std::unique_lock lock(inflight_mutex_);
    if (cacheable) {
      if (auto it = inflight_.find(key); it != inflight_.end()) {
        auto future = it->second;
        lock.unlock();
        ++cache_hits_;
        return future.get();
      }
      inflight_.emplace(key, promise.get_future().share());
    }
  }
  auto finish = [&] {
    if (!cacheable) return;
    std::lock_guard lock(inflight_mutex_);
    inflight_.erase(key);
  };

  try {
    std::string completion = call_provider(prompt);
    if (trim(completion).empty()) throw EmptyCompletionError("provider " + provider_.name() + " returned an empty completion");
    if (cacheable && cache_) cache_->put(CacheEntry{key, prompt, completion, provider_.name(), utc_timestamp()});
    if (cacheable) promise.set_value(completion);
    finish();
    return completion;
  } catch (...) {
    if (cacheable) promise.set_exception(std::current_exception());
    finish();
    throw;
  }
}

std::string complete(const LlmConfig& config, const std::string& prompt, LlmProvider& provider,
                     const TokenEstimator& estimator) {
  Completer completer(provider, config, estimator);
  return completer.complete(prompt);
}

std::string_view to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::exact: return "exact";
    case ParseStatus::normalized: return "normalized";
    case ParseStatus::fallback_null: return "fallback_null";
  }
  return "fallback_null";
}

ParseStatus parse_status_from_string(std::string_view s) {
  if (s == "exact") return ParseStatus::exact;
  if (s == "normalized") return ParseStatus::normalized;
  if (s == "fallback_null") return ParseStatus::fallback_null;
  throw DataError("unknown parse status '" + std::string(s) + "'");
}

namespace {

// Lowercased alphanumeric words separated by single spaces, padded with a
// space on both sides so whole-word containment is a plain substring test.
std::string word_normalize(std::string_view s) {
  std::string out = " ";
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      out.push_back(static_cast<char>(std::tolower(u)));
    } else if (out.back() != ' ') {
      out.push_back(' ');
    }
  }
  if (out.back() != ' ') out.push_back(' ');
  return out;
}

}  // namespace

Prediction parse_prediction(std::string_view completion, const RelationSchema& schema) {
  Prediction p;
  p.raw_completion = std::string(completion);
  const std::string body = trim(completion);
  const std::string first_line = trim(std::string_view(body).substr(0, body.find('\n')));
  const auto classes = schema.classes_with_null();

  for (const auto& c : classes) {
    if (schema.verbalize(c) == first_line) {
      p.label = c;
      p.parse_status = ParseStatus::exact;
      return p;
    }
  }

  const std::string line = word_normalize(first_line);
  std::vector<std::pair<std::string, const RelationLabel*>> matches;
  for (const auto& c : classes) {
    std::string norm = word_normalize(schema.verbalize(c));
    if (norm.size() > 2 && line.find(norm) != std::string::npos) matches.emplace_back(std::move(norm), &c);
  }
  // A match contained in a longer match (e.g. "parents" in "org parents") is
  // not a separate candidate.
  std::vector<const RelationLabel*> maximal;
  for (const auto& m : matches) {
    const bool contained = std::any_of(matches.begin(), matches.end(), [&](const auto& other) {
      return other.first.size() > m.first.size() && other.first.find(m.first) != std::string::npos;
    });
    if (!contained) maximal.push_back(m.second);
  }
  if (maximal.size() == 1) {
    p.label = *maximal.front();
    p.parse_status = ParseStatus::normalized;
    return p;
  }
  p.label = schema.null_label();
  p.parse_status = ParseStatus::fallback_null;
  return p;
}

}  // namespace gptre
