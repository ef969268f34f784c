#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gptre/corpus.hpp"
#include "gptre/embed.hpp"

namespace gptre {

// Exact cosine kNN. Vectors are L2-normalized once at build time; queries
// never mutate the index.
class KnnIndex {
 public:
  struct Hit {
    std::string id;
    double score = 0.0;
  };

  static KnnIndex build(Regime regime, std::span<const EmbeddingRecord> records);

  Regime regime() const { return regime_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  // Top min(k, available) by cosine descending; equal scores order by
  // ascending id. Throws DataError on a dimension mismatch or zero query.
  std::vector<Hit> query(std::span<const float> query, std::size_t k,
                         const std::set<std::string, std::less<>>& exclude = {}) const;

 private:
  KnnIndex(Regime regime, std::size_t dim) : regime_(regime), dim_(dim) {}

  Regime regime_;
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<double> unit_rows_;  // size() x dim_, row-major
};

// Throws DataError on an empty store.
KnnIndex build_index(const EmbeddingStore& store);

std::vector<KnnIndex::Hit> knn_query(const KnnIndex& index, std::span<const float> query, std::size_t k,
                                     const std::set<std::string, std::less<>>& exclude = {});

enum class Strategy { random_balanced, knn_sent, knn_entprompt, knn_ft };

std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);
// The embedding regime a kNN strategy retrieves in; nullopt for random.
std::optional<Regime> strategy_regime(Strategy s);

struct ShotRange {
  std::size_t lower = 1;
  std::size_t upper = 0;  // 0 = unbounded
};

// Per-dataset demonstration-count search ranges (semeval, tacred, scierc, ace05).
std::optional<ShotRange> default_shot_range(std::string_view dataset);
// A warning message when k lies outside the range, nullopt otherwise.
std::optional<std::string> check_shot_range(std::size_t k, std::string_view dataset,
                                            std::optional<ShotRange> override_range = std::nullopt);

struct SelectionRequest {
  const REInstance* test_instance = nullptr;
  std::size_t k = 0;
  Strategy strategy = Strategy::random_balanced;
  std::uint64_t seed = 0;
};

// A demonstration: (x_i, y_i, r_i). Reasoning, when present, is non-empty and
// free of prompt delimiters.
struct Demonstration {
  REInstance instance;
  RelationLabel label;
  std::optional<std::string> reasoning;
};

// Items are ordered by descending relevance. score is nullopt for randomly
// chosen items.
struct DemonstrationSet {
  std::vector<Demonstration> items;
  std::vector<std::optional<double>> scores;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  void push_back(Demonstration d, std::optional<double> score);
};

// Seed-shuffled order of the labels present in train (verbalized keys).
std::vector<std::string> balanced_label_order(const DatasetSplit& train, std::uint64_t seed);

// Round-robin over balanced_label_order; within a label, uniform without
// replacement; exhausted labels pass their turn. The test instance is never
// selected. Throws UsageError when k exceeds the available pool.
DemonstrationSet select_random_balanced(const DatasetSplit& train, const SelectionRequest& request);

// Top-k train instances by cosine to test_vector, test instance excluded.
DemonstrationSet select_knn(const DatasetSplit& train, const KnnIndex& index, const SelectionRequest& request,
                            std::span<const float> test_vector);

// {"test_id","strategy","k","items":[{"id","score"}]}; score is "random" for
// unscored items.
nlohmann::ordered_json selection_to_json(const SelectionRequest& request, const DemonstrationSet& set);

}  // namespace gptre
