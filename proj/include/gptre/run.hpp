#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gptre/embed.hpp"
#include "gptre/eval.hpp"
#include "gptre/llm.hpp"
#include "gptre/prompt.hpp"
#include "gptre/retrieve.hpp"

namespace gptre {

inline constexpr std::string_view kToolVersion = "gptre 0.1.0";

struct VectorPaths {
  std::filesystem::path train;
  std::filesystem::path test;
};

struct RunConfig {
  std::string dataset;  // semeval | tacred | scierc | ace05 | free-form; selects the shot range
  std::filesystem::path schema_path;
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  std::map<Regime, VectorPaths> vectors;

  Strategy strategy = Strategy::knn_ft;
  std::size_t k = 15;
  std::uint64_t seed = 0;
  std::optional<ShotRange> shot_range;

  LlmConfig llm;  // llm.input_budget_tokens is the prompt budget
  bool reasoning = false;
  // Provider answering reasoning queries; defaults to llm.provider.
  std::optional<ProviderKind> reasoning_provider;
  DemoOrder demo_order = DemoOrder::ascending_similarity;
  EvalSetting setting = EvalSetting::with_null;

  std::size_t max_in_flight = 4;
  double requests_per_minute = 0.0;

  std::filesystem::path cache_dir = "cache";
  std::filesystem::path output_dir = "out";

  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// Overrides for tests and embedding applications; unset members are built
// from the config.
struct RunEnvironment {
  LlmProvider* llm = nullptr;
  LlmProvider* reasoning_llm = nullptr;
  const TokenEstimator* estimator = nullptr;
  Sleeper sleep = real_sleeper();
};

struct RunResult {
  PredictionSet predictions;  // everything in the output file, test order
  nlohmann::ordered_json manifest;
  std::size_t processed = 0;  // instances handled by this invocation
  std::size_t skipped = 0;    // already present in the output
};

// Output layout under config.output_dir:
//   predictions.jsonl  one line per test instance
//   selections.jsonl   retrieved demonstration ids and scores
//   manifest.json      config, versions, effective k, status
// Test ids already present in predictions.jsonl are skipped. On failure the
// completed prefix is kept and the manifest records the error.
RunResult cmd_run(const RunConfig& config, const RunEnvironment& env = {});

struct SweepCell {
  Strategy strategy = Strategy::random_balanced;
  std::size_t k = 0;
  std::optional<EvalReport> report;
  std::optional<std::size_t> effective_k_min;
  std::optional<std::string> error;
};

struct SweepResult {
  std::vector<SweepCell> cells;
};

// Runs every (strategy, k) cell into <output_dir>/<strategy>_k<k>/, scores it,
// and writes sweep.csv / curve_<strategy>.csv (strategy,k,micro_f1) plus
// sweep.json. A failing cell is recorded and the sweep continues.
SweepResult cmd_sweep(const RunConfig& base, const std::vector<Strategy>& strategies,
                      const std::vector<std::size_t>& ks, const RunEnvironment& env = {});

// Generates and caches reasoning for every train instance under its gold label.
ReasoningStats cmd_reason(const RunConfig& config, const RunEnvironment& env = {});

}  // namespace gptre
