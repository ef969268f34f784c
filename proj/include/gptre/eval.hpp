#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gptre/corpus.hpp"
#include "gptre/llm.hpp"

namespace gptre {

enum class EvalSetting { with_null, without_null };

std::string_view to_string(EvalSetting s);
EvalSetting eval_setting_from_string(std::string_view s);

struct PredictionPair {
  std::string test_id;
  RelationLabel gold;
  RelationLabel pred;
  ParseStatus parse_status = ParseStatus::exact;
};

struct PredictionSet {
  std::vector<PredictionPair> pairs;

  // Throws DataError on duplicate ids or labels outside the schema.
  void validate(const RelationSchema& schema) const;
};

struct LabelScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct ConfusionMatrix {
  std::vector<std::string> labels;  // schema classes, NULL last
  std::vector<std::vector<std::size_t>> cells;  // [gold][pred]

  std::size_t total() const;
  std::string to_csv() const;
  // gold,pred,count rows for heat-map plotting.
  std::string to_long_csv() const;
};

struct EvalReport {
  EvalSetting setting = EvalSetting::with_null;
  double micro_precision = 0.0;
  double micro_recall = 0.0;
  double micro_f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  // Set when the corresponding ratio was 0/0 and reported as 0.
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  std::vector<std::pair<std::string, LabelScores>> per_label;
  ConfusionMatrix confusion;
  std::optional<double> null_overprediction_rate;
  std::size_t parse_fallback_count = 0;

  nlohmann::ordered_json to_json() const;
  std::string to_table() const;
};

// with_null: TP/FP/FN count non-NULL decisions only. without_null: plain
// micro over every pair; gold-NULL pairs must already be filtered out.
EvalReport score(const PredictionSet& preds, const RelationSchema& schema, EvalSetting setting);

ConfusionMatrix confusion_matrix(const PredictionSet& preds, const RelationSchema& schema);

// Share of gold-NULL pairs predicted as a non-NULL label; nullopt when there
// is no gold-NULL pair.
std::optional<double> null_overprediction_rate(const PredictionSet& preds);

// Removes gold-NULL instances. Throws DataError when nothing remains.
DatasetSplit filter_null_setting(const DatasetSplit& split);

// Reads the per-instance prediction lines written by a run.
PredictionSet read_predictions(const std::filesystem::path& path, const RelationSchema& schema);

}  // namespace gptre
