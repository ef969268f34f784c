#include "gptre/run.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "gptre/errors.hpp"
#include "gptre/util.hpp"

namespace gptre {

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["dataset"] = dataset;
  j["schema"] = schema_path.string();
  j["train"] = train_path.string();
  j["test"] = test_path.string();
  nlohmann::ordered_json vecs = nlohmann::ordered_json::object();
  for (const auto& [regime, paths] : vectors) {
    vecs[std::string(to_string(regime))] = {{"train", paths.train.string()}, {"test", paths.test.string()}};
  }
  j["vectors"] = vecs;
  j["strategy"] = std::string(to_string(strategy));
  j["k"] = k;
  j["seed"] = seed;
  if (shot_range) {
    j["shot_range"] = {shot_range->lower, shot_range->upper};
  } else {
    j["shot_range"] = nullptr;
  }
  j["llm"] = llm.to_json();
  j["reasoning"] = reasoning;
  j["reasoning_provider"] =
      reasoning_provider ? nlohmann::ordered_json(std::string(to_string(*reasoning_provider))) : nlohmann::ordered_json(nullptr);
  j["demo_order"] = std::string(to_string(demo_order));
  j["setting"] = std::string(to_string(setting));
  j["max_in_flight"] = max_in_flight;
  j["requests_per_minute"] = requests_per_minute;
  j["cache_dir"] = cache_dir.string();
  j["output_dir"] = output_dir.string();
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.dataset = j.value("dataset", std::string());
    c.schema_path = j.value("schema", std::string());
    c.train_path = j.value("train", std::string());
    c.test_path = j.value("test", std::string());
    if (j.contains("vectors")) {
      for (const auto& [regime, paths] : j.at("vectors").items()) {
        c.vectors[regime_from_string(regime)] = {paths.value("train", std::string()), paths.value("test", std::string())};
      }
    }
    c.strategy = strategy_from_string(j.value("strategy", std::string(to_string(c.strategy))));
    c.k = j.value("k", c.k);
    c.seed = j.value("seed", c.seed);
    if (j.contains("shot_range") && j.at("shot_range").is_array()) {
      c.shot_range = ShotRange{j.at("shot_range").at(0).get<std::size_t>(), j.at("shot_range").at(1).get<std::size_t>()};
    }
    if (j.contains("llm")) c.llm = LlmConfig::from_json(j.at("llm"));
    c.reasoning = j.value("reasoning", false);
    if (j.contains("reasoning_provider") && j.at("reasoning_provider").is_string()) {
      c.reasoning_provider = provider_kind_from_string(j.at("reasoning_provider").get<std::string>());
    }
    c.demo_order = demo_order_from_string(j.value("demo_order", std::string(to_string(c.demo_order))));
    c.setting = eval_setting_from_string(j.value("setting", std::string(to_string(c.setting))));
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.requests_per_minute = j.value("requests_per_minute", c.requests_per_minute);
    c.cache_dir = j.value("cache_dir", c.cache_dir.string());
    c.output_dir = j.value("output_dir", c.output_dir.string());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed run config: ") + e.what());
  }
  return c;
}

namespace {

struct PredictionLine {
  PredictionPair pair;
  std::string raw_completion;
  std::size_t effective_k = 0;
  std::vector<std::string> demo_ids;
  nlohmann::ordered_json selection;
  std::vector<std::string> warnings;
};

std::string prediction_json_line(const PredictionLine& line) {
  nlohmann::ordered_json j;
  j["test_id"] = line.pair.test_id;
  j["gold"] = verbalize(line.pair.gold);
  j["pred"] = verbalize(line.pair.pred);
  j["parse_status"] = std::string(to_string(line.pair.parse_status));
  j["effective_k"] = line.effective_k;
  j["demo_ids"] = line.demo_ids;
  j["raw_completion"] = line.raw_completion;
  return j.dump();
}

std::set<std::string> existing_prediction_ids(const std::filesystem::path& path) {
  std::set<std::string> ids;
  if (!std::filesystem::exists(path)) return ids;
  for (const auto& line : read_lines(path)) {
    if (trim(line).empty()) continue;
    try {
      ids.insert(nlohmann::json::parse(line).at("test_id").get<std::string>());
    } catch (const nlohmann::json::exception&) {
      // A torn final line from an interrupted write; it is rewritten below.
    }
  }
  return ids;
}

// Drops unparseable lines (a torn tail) so appends start on a clean line.
void repair_jsonl(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return;
  std::string kept;
  bool torn = false;
  for (const auto& line : read_lines(path)) {
    if (trim(line).empty()) continue;
    if (!nlohmann::json::accept(line)) {
      torn = true;
      continue;
    }
    kept += line + "\n";
  }
  if (torn || (!kept.empty() && read_file(path) != kept)) write_file_atomic(path, kept);
}

struct Providers {
  std::unique_ptr<LlmProvider> owned_llm;
  std::unique_ptr<LlmProvider> owned_reasoning;
  LlmProvider* llm = nullptr;
  LlmProvider* reasoning = nullptr;
};

Providers resolve_providers(const RunConfig& config, const RunEnvironment& env, const RelationSchema& schema) {
  Providers p;
  if (env.llm) {
    p.llm = env.llm;
  } else {
    p.owned_llm = make_provider(config.llm.provider, schema.null_name());
    p.llm = p.owned_llm.get();
  }
  if (env.reasoning_llm) {
    p.reasoning = env.reasoning_llm;
  } else if (config.reasoning_provider && *config.reasoning_provider != config.llm.provider) {
    p.owned_reasoning = make_provider(*config.reasoning_provider, schema.null_name());
    p.reasoning = p.owned_reasoning.get();
  } else {
    p.reasoning = p.llm;
  }
  return p;
}

CompleterOptions completer_options(const RunConfig& config, const RunEnvironment& env) {
  CompleterOptions o;
  o.sleep = env.sleep;
  o.max_in_flight = config.max_in_flight;
  o.requests_per_minute = config.requests_per_minute;
  return o;
}

void write_manifest(const std::filesystem::path& dir, const nlohmann::ordered_json& manifest) {
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

RunResult cmd_run(const RunConfig& config, const RunEnvironment& env) {
  if (config.k == 0) throw UsageError("k must be at least 1");
  const RelationSchema schema = load_schema(config.schema_path);
  DatasetSplit train = load_dataset(config.train_path, schema, SplitName::train);
  DatasetSplit test = load_dataset(config.test_path, schema, SplitName::test);
  if (config.setting == EvalSetting::without_null) {
    train = filter_null_setting(train);
    test = filter_null_setting(test);
  }

  std::optional<KnnIndex> index;
  std::optional<EmbeddingStore> test_vectors;
  if (const auto regime = strategy_regime(config.strategy)) {
    auto it = config.vectors.find(*regime);
    if (it == config.vectors.end()) {
      throw UsageError("strategy " + std::string(to_string(config.strategy)) + " needs " +
                       std::string(to_string(*regime)) + " train/test vector files");
    }
    auto train_store = read_vector_file(it->second.train);
    test_vectors.emplace(read_vector_file(it->second.test));
    if (train_store.regime() != *regime || test_vectors->regime() != *regime) {
      throw DataError("vector files for " + std::string(to_string(config.strategy)) + " must hold regime " +
                      std::string(to_string(*regime)));
    }
    // Only train ids of the (possibly filtered) split may be retrieved.
    std::vector<EmbeddingRecord> pool;
    for (const auto& rec : train_store.records()) {
      if (train.find(rec.instance_id)) pool.push_back(rec);
    }
    index.emplace(KnnIndex::build(*regime, pool));
  }

  const std::filesystem::path out_dir = config.output_dir;
  std::filesystem::create_directories(out_dir);
  const auto predictions_path = out_dir / "predictions.jsonl";
  const auto selections_path = out_dir / "selections.jsonl";
  repair_jsonl(predictions_path);
  repair_jsonl(selections_path);
  const auto done = existing_prediction_ids(predictions_path);

  CharQuarterEstimator default_estimator;
  const TokenEstimator& estimator = env.estimator ? *env.estimator : default_estimator;
  Providers providers = resolve_providers(config, env, schema);
  CompletionCache response_cache(config.cache_dir / "responses");
  CompletionCache reasoning_cache(config.cache_dir / "reasoning");
  Completer completer(*providers.llm, config.llm, estimator, &response_cache, completer_options(config, env));
  // Reasoning queries are free-form; the budget guard is the prompt's own.
  Completer reasoning_completer(*providers.reasoning, config.llm, estimator, nullptr, completer_options(config, env));

  std::vector<std::string> warnings;
  if (auto w = check_shot_range(config.k, config.dataset, config.shot_range)) warnings.push_back(*w);

  const std::string instructions = render_instructions(schema);
  std::vector<const REInstance*> todo;
  for (const auto& inst : test.instances()) {
    if (!done.contains(inst.id)) todo.push_back(&inst);
  }

  auto process = [&](const REInstance& inst) {
    PredictionLine line;
    SelectionRequest request{&inst, config.k, config.strategy, mix_seed(config.seed, inst.id)};
    DemonstrationSet demos;
    if (index) {
      const EmbeddingRecord* vec = test_vectors->find(inst.id);
      if (vec == nullptr) throw DataError("missing test vector for '" + inst.id + "'");
      demos = select_knn(train, *index, request, vec->values);
    } else {
      demos = select_random_balanced(train, request);
    }
    line.selection = selection_to_json(request, demos);
    if (config.reasoning) {
      ReasoningStats stats;
      demos = induce_reasoning(demos, reasoning_completer, reasoning_cache, &stats);
      line.warnings = std::move(stats.warnings);
    }
    PromptParts parts{instructions, demos, render_test_block(inst), config.llm.input_budget_tokens};
    const auto prompt = assemble_prompt(parts, estimator, config.demo_order);
    std::string completion;
    try {
      completion = completer.complete(prompt.text);
    } catch (const EmptyCompletionError& e) {
      line.warnings.push_back(std::string(e.what()) + " for '" + inst.id + "'");
    }
    Prediction pred = parse_prediction(completion, schema);
    line.pair = PredictionPair{inst.id, inst.gold_label, pred.label, pred.parse_status};
    line.raw_completion = std::move(pred.raw_completion);
    line.effective_k = prompt.demonstrations_used;
    line.demo_ids = prompt.demo_ids;
    return line;
  };

  auto manifest_base = [&] {
    nlohmann::ordered_json m;
    m["tool"] = std::string(kToolVersion);
    m["template_version"] = std::string(kTemplateVersion);
    m["estimator"] = estimator.name();
    m["provider"] = providers.llm->name();
    m["reasoning_provider"] = config.reasoning ? nlohmann::ordered_json(providers.reasoning->name()) : nlohmann::ordered_json(nullptr);
    m["seed"] = config.seed;
    m["config"] = config.to_json();
    return m;
  };

  RunResult result;
  result.skipped = test.size() - todo.size();
  const std::size_t chunk = std::max<std::size_t>(1, config.max_in_flight) * 8;
  try {
    for (std::size_t begin = 0; begin < todo.size(); begin += chunk) {
      const std::size_t end = std::min(todo.size(), begin + chunk);
      std::vector<std::optional<PredictionLine>> lines(end - begin);
      std::exception_ptr failure;
      try {
        parallel_for_bounded(lines.size(), config.max_in_flight,
                             [&](std::size_t i) { lines[i] = process(*todo[begin + i]); });
      } catch (...) {
        failure = std::current_exception();
      }
      std::ofstream preds_out(predictions_path, std::ios::app | std::ios::binary);
      std::ofstream sel_out(selections_path, std::ios::app | std::ios::binary);
      for (auto& line : lines) {
        if (!line) break;
        preds_out << prediction_json_line(*line) << '\n';
        sel_out << line->selection.dump() << '\n';
        warnings.insert(warnings.end(), line->warnings.begin(), line->warnings.end());
        ++result.processed;
      }
      preds_out.flush();
      sel_out.flush();
      if (failure) std::rethrow_exception(failure);
    }
  } catch (const std::exception& e) {
    auto m = manifest_base();
    m["status"] = "failed";
    m["error"] = e.what();
    m["completed"] = result.skipped + result.processed;
    m["total"] = test.size();
    m["warnings"] = warnings;
    write_manifest(out_dir, m);
    throw;
  }

  // Summaries cover the whole output file so resumed runs match fresh ones.
  std::map<std::string, std::size_t> order;
  for (std::size_t i = 0; i < test.size(); ++i) order[test.instances()[i].id] = i;
  std::vector<std::pair<std::size_t, PredictionPair>> ordered;
  std::size_t k_min = config.k, k_max = 0, k_sum = 0, lines_seen = 0;
  for (const auto& text : read_lines(predictions_path)) {
    if (trim(text).empty()) continue;
    const auto j = nlohmann::json::parse(text);
    const auto id = j.at("test_id").get<std::string>();
    auto it = order.find(id);
    if (it == order.end()) throw DataError("predictions file has unknown test id '" + id + "'");
    const auto gold = schema.from_verbalized(j.at("gold").get<std::string>());
    const auto pred = schema.from_verbalized(j.at("pred").get<std::string>());
    if (!gold || !pred) throw DataError("predictions file has a label outside the schema for '" + id + "'");
    ordered.emplace_back(it->second, PredictionPair{id, *gold, *pred, parse_status_from_string(j.at("parse_status").get<std::string>())});
    const auto ek = j.value("effective_k", std::size_t{0});
    k_min = std::min(k_min, ek);
    k_max = std::max(k_max, ek);
    k_sum += ek;
    ++lines_seen;
  }
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [pos, pair] : ordered) result.predictions.pairs.push_back(std::move(pair));

  auto m = manifest_base();
  m["status"] = "complete";
  m["total"] = test.size();
  m["effective_k"] = {{"requested", config.k},
                      {"min", lines_seen ? k_min : 0},
                      {"max", k_max},
                      {"mean", lines_seen ? static_cast<double>(k_sum) / static_cast<double>(lines_seen) : 0.0}};
  m["parse_fallback_count"] = std::count_if(result.predictions.pairs.begin(), result.predictions.pairs.end(),
                                            [](const auto& p) { return p.parse_status == ParseStatus::fallback_null; });
  m["warnings"] = warnings;
  write_manifest(out_dir, m);
  result.manifest = std::move(m);
  return result;
}

SweepResult cmd_sweep(const RunConfig& base, const std::vector<Strategy>& strategies, const std::vector<std::size_t>& ks,
                      const RunEnvironment& env) {
  if (strategies.empty() || ks.empty()) throw UsageError("sweep grid is empty");
  const RelationSchema schema = load_schema(base.schema_path);
  const std::filesystem::path root = base.output_dir;
  std::filesystem::create_directories(root);

  SweepResult result;
  for (Strategy s : strategies) {
    for (std::size_t k : ks) {
      SweepCell cell;
      cell.strategy = s;
      cell.k = k;
      RunConfig cfg = base;
      cfg.strategy = s;
      cfg.k = k;
      cfg.output_dir = root / (std::string(to_string(s)) + "_k" + std::to_string(k));
      try {
        auto run = cmd_run(cfg, env);
        auto report = score(run.predictions, schema, cfg.setting);
        write_file_atomic(cfg.output_dir / "report.json", report.to_json().dump(2) + "\n");
        cell.effective_k_min = run.manifest["effective_k"]["min"].get<std::size_t>();
        cell.report = std::move(report);
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      result.cells.push_back(std::move(cell));
    }
  }

  std::ostringstream all;
  all << "strategy,k,micro_f1\n";
  std::map<Strategy, std::string> curves;
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const auto& cell : result.cells) {
    nlohmann::ordered_json j;
    j["strategy"] = std::string(to_string(cell.strategy));
    j["k"] = cell.k;
    if (cell.report) {
      std::ostringstream row;
      row.precision(6);
      row << to_string(cell.strategy) << "," << cell.k << "," << std::fixed << cell.report->micro_f1 << "\n";
      all << row.str();
      curves[cell.strategy] += row.str();
      j["status"] = "ok";
      j["micro"] = cell.report->to_json()["micro"];
      j["effective_k_min"] = cell.effective_k_min.value_or(0);
    } else {
      j["status"] = "failed";
      j["error"] = cell.error.value_or("");
    }
    summary.push_back(std::move(j));
  }
  write_file_atomic(root / "sweep.csv", all.str());
  for (const auto& [s, rows] : curves) {
    write_file_atomic(root / ("curve_" + std::string(to_string(s)) + ".csv"), "strategy,k,micro_f1\n" + rows);
  }
  write_file_atomic(root / "sweep.json", summary.dump(2) + "\n");
  return result;
}

ReasoningStats cmd_reason(const RunConfig& config, const RunEnvironment& env) {
  const RelationSchema schema = load_schema(config.schema_path);
  const DatasetSplit train = load_dataset(config.train_path, schema, SplitName::train);
  CharQuarterEstimator default_estimator;
  const TokenEstimator& estimator = env.estimator ? *env.estimator : default_estimator;
  Providers providers = resolve_providers(config, env, schema);
  CompletionCache cache(config.cache_dir / "reasoning");
  Completer completer(*providers.reasoning, config.llm, estimator, nullptr, completer_options(config, env));
  DemonstrationSet all;
  for (const auto& inst : train.instances()) all.push_back(Demonstration{inst, inst.gold_label, std::nullopt}, std::nullopt);
  ReasoningStats stats;
  induce_reasoning(all, completer, cache, &stats);
  return stats;
}

}  // namespace gptre
