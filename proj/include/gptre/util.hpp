#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gptre/errors.hpp"

namespace gptre {

std::string sha256_hex(std::string_view data);

std::string trim(std::string_view s);
std::string join(std::span<const std::string> parts, std::string_view sep);
std::vector<std::string> split_whitespace(std::string_view s);
bool contains_whitespace(std::string_view s);

// Shortest "%.9g" rendering; float32 values survive a round trip exactly.
std::string format_float9(float v);

std::vector<std::string> read_lines(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames over the destination.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string utc_timestamp();

// Seeded generator with a portable bounded draw; std::uniform_int_distribution
// and std::shuffle are implementation-defined, which would make selections
// differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  // Uniform in [0, 1).
  double unit();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt);

// Runs fn(i) for i in [0, count) on at most max_in_flight threads. The first
// exception thrown by any task is rethrown after all workers stop.
void parallel_for_bounded(std::size_t count, std::size_t max_in_flight,
                          const std::function<void(std::size_t)>& fn);

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper real_sleeper();

// Calls fn until it succeeds. TransientProviderError triggers a retry with
// exponential backoff; any other exception propagates immediately. Exhaustion
// raises ProviderError carrying the last message.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn, const Sleeper& sleep = real_sleeper())
    -> decltype(fn()) {
  auto backoff = policy.initial_backoff;
  std::string last;
  for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
    try {
      return fn();
    } catch (const TransientProviderError& e) {
      last = e.what();
      if (attempt == policy.max_attempts) break;
      sleep(backoff);
      backoff = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(backoff.count()) * policy.multiplier));
    }
  }
  throw ProviderError("provider failed after " + std::to_string(policy.max_attempts) +
                      " attempts: " + last);
}

}  // namespace gptre
