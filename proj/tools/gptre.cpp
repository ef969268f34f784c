// gptre command line. Exit codes: 0 ok, 1 usage, 2 data, 3 provider.
#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "gptre/corpus.hpp"
#include "gptre/embed.hpp"
#include "gptre/errors.hpp"
#include "gptre/eval.hpp"
#include "gptre/run.hpp"

using namespace gptre;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string cache_dir = "cache";
  std::string out;
  std::uint64_t seed = 0;
};

struct RunFlags {
  std::string from_manifest;
  std::string dataset;
  std::string schema;
  std::string train;
  std::string test;
  std::vector<std::string> vectors;  // REGIME=TRAIN,TEST
  std::string strategy = "knn_ft";
  std::size_t k = 15;
  std::vector<std::size_t> shot_range;
  std::string provider = "mock_oracle";
  std::string reasoning_provider;
  std::string model = LlmConfig{}.model_name;
  double temperature = 0.0;
  int max_output_tokens = 256;
  double top_p = 1.0;
  double frequency_penalty = 0.0;
  double presence_penalty = 0.0;
  std::size_t budget = 4097;
  bool reasoning = false;
  std::string demo_order = "ascending_similarity";
  std::string setting = "with_null";
  std::size_t max_in_flight = 4;
  double rpm = 0.0;
};

void add_run_flags(CLI::App* app, RunFlags& f) {
  app->add_option("--from-manifest", f.from_manifest, "reuse the config recorded in a manifest.json");
  app->add_option("--dataset", f.dataset, "semeval|tacred|scierc|ace05 (selects the shot range)");
  app->add_option("--schema", f.schema, "schema json");
  app->add_option("--train", f.train, "train split (jsonl)");
  app->add_option("--test", f.test, "test split (jsonl)");
  app->add_option("--vectors", f.vectors, "REGIME=TRAIN_VECTORS,TEST_VECTORS (repeatable)");
  app->add_option("--strategy", f.strategy, "random_balanced|knn_sent|knn_entprompt|knn_ft");
  app->add_option("-k,--k", f.k, "demonstrations per prompt");
  app->add_option("--shot-range", f.shot_range, "LOWER UPPER override")->expected(2);
  app->add_option("--provider", f.provider, "mock_oracle|mock_echo|http");
  app->add_option("--reasoning-provider", f.reasoning_provider, "provider for reasoning queries");
  app->add_option("--model", f.model);
  app->add_option("--temperature", f.temperature);
  app->add_option("--max-output-tokens", f.max_output_tokens);
  app->add_option("--top-p", f.top_p);
  app->add_option("--frequency-penalty", f.frequency_penalty);
  app->add_option("--presence-penalty", f.presence_penalty);
  app->add_option("--budget", f.budget, "prompt token budget");
  app->add_flag("--reasoning", f.reasoning, "attach induced reasoning to demonstrations");
  app->add_option("--demo-order", f.demo_order, "ascending_similarity|descending_similarity");
  app->add_option("--setting", f.setting, "with_null|without_null");
  app->add_option("--max-in-flight", f.max_in_flight);
  app->add_option("--rpm", f.rpm, "requests per minute, 0 = unlimited");
}

RunConfig build_run_config(const RunFlags& f, const Globals& g) {
  RunConfig c;
  if (!f.from_manifest.empty()) {
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(read_file(f.from_manifest));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(f.from_manifest + ": " + e.what());
    }
    if (!m.contains("config")) throw DataError(f.from_manifest + ": no config recorded");
    c = RunConfig::from_json(m.at("config"));
    if (!g.out.empty()) c.output_dir = g.out;
    return c;
  }
  if (f.schema.empty() || f.train.empty() || f.test.empty()) throw UsageError("--schema, --train and --test are required");
  c.dataset = f.dataset;
  c.schema_path = f.schema;
  c.train_path = f.train;
  c.test_path = f.test;
  for (const auto& arg : f.vectors) {
    const auto eq = arg.find('=');
    const auto comma = arg.find(',', eq == std::string::npos ? 0 : eq);
    if (eq == std::string::npos || comma == std::string::npos) {
      throw UsageError("--vectors expects REGIME=TRAIN,TEST, got '" + arg + "'");
    }
    c.vectors[regime_from_string(arg.substr(0, eq))] = {arg.substr(eq + 1, comma - eq - 1), arg.substr(comma + 1)};
  }
  c.strategy = strategy_from_string(f.strategy);
  c.k = f.k;
  c.seed = g.seed;
  if (!f.shot_range.empty()) c.shot_range = ShotRange{f.shot_range[0], f.shot_range[1]};
  c.llm.provider = provider_kind_from_string(f.provider);
  c.llm.model_name = f.model;
  c.llm.temperature = f.temperature;
  c.llm.max_output_tokens = f.max_output_tokens;
  c.llm.top_p = f.top_p;
  c.llm.frequency_penalty = f.frequency_penalty;
  c.llm.presence_penalty = f.presence_penalty;
  c.llm.input_budget_tokens = f.budget;
  c.reasoning = f.reasoning;
  if (!f.reasoning_provider.empty()) c.reasoning_provider = provider_kind_from_string(f.reasoning_provider);
  c.demo_order = demo_order_from_string(f.demo_order);
  c.setting = eval_setting_from_string(f.setting);
  c.max_in_flight = f.max_in_flight;
  c.requests_per_minute = f.rpm;
  c.cache_dir = g.cache_dir;
  c.output_dir = g.out.empty() ? "out" : g.out;
  return c;
}

void print_stats(const DatasetSplit& split) {
  const auto s = split_stats(split);
  std::cout << "instances " << s.total << ", NULL " << s.null_count << " (" << s.null_fraction * 100.0 << "%)\n";
  for (const auto& [label, n] : s.histogram) std::cout << "  " << label << "\t" << n << "\n";
}

void write_report(const EvalReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  write_file_atomic(dir / "report.json", report.to_json().dump(2) + "\n");
  write_file_atomic(dir / "confusion.csv", report.confusion.to_csv());
  write_file_atomic(dir / "confusion_long.csv", report.confusion.to_long_csv());
  std::cout << report.to_table();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gptre: relation extraction by in-context learning"};
  app.set_config("--config", "", "TOML/INI config file; sections match subcommands");
  app.require_subcommand(1);
  Globals g;
  app.add_option("--cache-dir", g.cache_dir, "completion and reasoning caches")->capture_default_str();
  app.add_option("--out", g.out, "output path");
  app.add_option("--seed", g.seed, "seed for every random choice")->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "convert a native split into canonical jsonl");
  std::string in_format = "jsonl", in_path, in_schema, in_split = "train";
  ingest->add_option("--format", in_format, "jsonl|tacred|semeval")->capture_default_str();
  ingest->add_option("--input", in_path)->required();
  ingest->add_option("--schema", in_schema)->required();
  ingest->add_option("--split", in_split, "train|dev|test")->capture_default_str();

  // embed
  auto* embed = app.add_subcommand("embed", "embed a split into a vector file");
  std::string em_data, em_schema, em_regime = "sent", em_provider = "hash", em_import, em_model = "remote";
  std::size_t em_dim = 256, em_batch = 32;
  embed->add_option("--data", em_data)->required();
  embed->add_option("--schema", em_schema)->required();
  embed->add_option("--regime", em_regime, "sent|entprompt|ft")->capture_default_str();
  embed->add_option("--provider", em_provider, "hash|http (GPTRE_EMBED_URL, GPTRE_EMBED_TOKEN)")->capture_default_str();
  embed->add_option("--model", em_model, "model name recorded for http embeddings");
  embed->add_option("--dim", em_dim)->capture_default_str();
  embed->add_option("--batch-size", em_batch)->capture_default_str();
  embed->add_option("--import", em_import, "ft regime: vector file produced by the trainer");

  // index
  auto* index = app.add_subcommand("index", "check a vector file and query it");
  std::string ix_vectors, ix_query_vectors, ix_id;
  std::size_t ix_k = 5;
  index->add_option("--vectors", ix_vectors)->required();
  index->add_option("--query-vectors", ix_query_vectors, "file holding the query id (default: --vectors)");
  index->add_option("--id", ix_id, "query instance id");
  index->add_option("-k,--k", ix_k)->capture_default_str();

  auto* reason = app.add_subcommand("reason", "pre-generate reasoning for train demonstrations");
  RunFlags reason_flags;
  add_run_flags(reason, reason_flags);

  auto* run = app.add_subcommand("run", "predict every test instance");
  RunFlags run_flags;
  add_run_flags(run, run_flags);

  auto* sweep = app.add_subcommand("sweep", "run a strategy x k grid");
  RunFlags sweep_flags;
  add_run_flags(sweep, sweep_flags);
  std::vector<std::string> sw_strategies;
  std::vector<std::size_t> sw_ks;
  sweep->add_option("--strategies", sw_strategies)->delimiter(',')->required();
  sweep->add_option("--ks", sw_ks)->delimiter(',')->required();

  auto* eval = app.add_subcommand("eval", "score a predictions file");
  std::string ev_predictions, ev_schema, ev_setting = "with_null";
  eval->add_option("--predictions", ev_predictions)->required();
  eval->add_option("--schema", ev_schema)->required();
  eval->add_option("--setting", ev_setting)->capture_default_str();

  auto* report = app.add_subcommand("report", "score a run directory from its manifest");
  std::string rp_dir;
  report->add_option("run_dir", rp_dir)->required();

  auto* sample = app.add_subcommand("sample-subset", "label-stratified subset of a split");
  std::string ss_data, ss_schema;
  std::int64_t ss_n = 0;
  sample->add_option("--data", ss_data)->required();
  sample->add_option("--schema", ss_schema)->required();
  sample->add_option("-n,--n", ss_n)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*ingest) {
      const auto schema = load_schema(in_schema);
      const auto split_name = split_name_from_string(in_split);
      DatasetSplit split = in_format == "tacred"    ? load_tacred(in_path, schema, split_name)
                           : in_format == "semeval" ? load_semeval(in_path, schema, split_name)
                           : in_format == "jsonl"   ? load_dataset(in_path, schema, split_name)
                                                    : throw UsageError("unknown format '" + in_format + "'");
      if (!g.out.empty()) save_dataset(split, g.out);
      print_stats(split);
    } else if (*embed) {
      const auto schema = load_schema(em_schema);
      const auto split = load_dataset(em_data, schema);
      if (g.out.empty()) throw UsageError("--out is required");
      const Regime regime = regime_from_string(em_regime);
      if (regime == Regime::ft) {
        if (em_import.empty()) throw UsageError("the ft regime is produced by the trainer; pass --import");
        auto store = import_ft_vectors(em_import, split);
        if (fs::path(em_import) != fs::path(g.out)) write_vector_file(store, g.out);
        std::cout << "imported " << store.size() << " ft vectors, dim " << store.dim() << "\n";
      } else {
        std::unique_ptr<EmbeddingProvider> provider;
        if (em_provider == "hash") {
          provider = std::make_unique<HashProjectionProvider>(em_dim, g.seed);
        } else if (em_provider == "http") {
          provider = std::make_unique<HttpEmbeddingProvider>(HttpEndpoint::from_env("GPTRE_EMBED_URL", "GPTRE_EMBED_TOKEN"),
                                                             em_dim, em_model);
        } else {
          throw UsageError("unknown embedding provider '" + em_provider + "'");
        }
        EmbedOptions opts;
        opts.batch_size = em_batch;
        auto store = embed_split(split, *provider, regime, g.out, opts);
        std::cout << "vectors " << store.size() << ", dim " << store.dim() << ", provider " << provider->name() << "\n";
      }
    } else if (*index) {
      const auto store = read_vector_file(ix_vectors);
      const auto idx = build_index(store);
      std::cout << "index: " << idx.size() << " vectors, dim " << idx.dim() << ", regime " << to_string(idx.regime()) << "\n";
      if (!ix_id.empty()) {
        const auto qstore = ix_query_vectors.empty() ? store : read_vector_file(ix_query_vectors);
        const auto* q = qstore.find(ix_id);
        if (q == nullptr) throw DataError("no vector for '" + ix_id + "'");
        for (const auto& hit : knn_query(idx, q->values, ix_k, {ix_id})) {
          std::cout << hit.id << "\t" << format_float9(static_cast<float>(hit.score)) << "\n";
        }
      }
    } else if (*reason) {
      const auto stats = cmd_reason(build_run_config(reason_flags, g));
      std::cout << "generated " << stats.generated << ", cached " << stats.cache_hits << "\n";
      for (const auto& w : stats.warnings) std::cerr << "warning: " << w << "\n";
    } else if (*run) {
      const auto config = build_run_config(run_flags, g);
      const auto result = cmd_run(config);
      for (const auto& w : result.manifest["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
      std::cout << "processed " << result.processed << ", resumed past " << result.skipped << ", output "
                << config.output_dir.string() << "\n";
      const auto schema = load_schema(config.schema_path);
      write_report(score(result.predictions, schema, config.setting), config.output_dir);
    } else if (*sweep) {
      std::vector<Strategy> strategies;
      for (const auto& s : sw_strategies) strategies.push_back(strategy_from_string(s));
      const auto result = cmd_sweep(build_run_config(sweep_flags, g), strategies, sw_ks);
      int failed = 0;
      for (const auto& cell : result.cells) {
        std::cout << to_string(cell.strategy) << "\tk=" << cell.k << "\t";
        if (cell.report) {
          std::cout << "F1 " << cell.report->micro_f1 << "\n";
        } else {
          std::cout << "failed: " << cell.error.value_or("") << "\n";
          ++failed;
        }
      }
      if (failed > 0 && failed == static_cast<int>(result.cells.size())) throw DataError("every sweep cell failed");
    } else if (*eval) {
      const auto schema = load_schema(ev_schema);
      const auto preds = read_predictions(ev_predictions, schema);
      const auto r = score(preds, schema, eval_setting_from_string(ev_setting));
      if (g.out.empty()) {
        std::cout << r.to_table();
      } else {
        write_report(r, g.out);
      }
    } else if (*report) {
      const fs::path dir = rp_dir;
      const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
      const auto config = RunConfig::from_json(manifest.at("config"));
      const auto schema = load_schema(config.schema_path);
      const auto preds = read_predictions(dir / "predictions.jsonl", schema);
      std::cout << "status: " << manifest.value("status", std::string("?")) << "\n";
      write_report(score(preds, schema, config.setting), g.out.empty() ? dir : fs::path(g.out));
    } else if (*sample) {
      const auto schema = load_schema(ss_schema);
      const auto split = load_dataset(ss_data, schema);
      const auto subset = sample_stratified_subset(split, ss_n, g.seed);
      if (!g.out.empty()) save_dataset(subset, g.out);
      print_stats(subset);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ProviderError& e) {
    std::cerr << "provider error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
