#pragma once

#include <stdexcept>
#include <string>

namespace gptre {

// Malformed inputs: dataset records, vector files, schema violations.
// Maps to CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Completion or embedding backend failed after the retry policy was exhausted.
// Maps to CLI exit code 3.
class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A provider failure worth retrying (timeouts, 429, 5xx).
class TransientProviderError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

// The provider answered with nothing but whitespace.
class EmptyCompletionError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

// Bad configuration or arguments. Maps to CLI exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gptre
