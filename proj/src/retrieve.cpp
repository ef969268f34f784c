#include "gptre/retrieve.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "gptre/errors.hpp"
#include "gptre/util.hpp"

namespace gptre {

KnnIndex KnnIndex::build(Regime regime, std::span<const EmbeddingRecord> records) {
  if (records.empty()) throw DataError("cannot build an index over an empty store");
  const std::size_t dim = records.front().dim();
  KnnIndex index(regime, dim);
  index.ids_.reserve(records.size());
  index.unit_rows_.reserve(records.size() * dim);
  for (const auto& rec : records) {
    if (rec.dim() != dim) {
      throw DataError("mixed dimensions in store: '" + rec.instance_id + "' has " + std::to_string(rec.dim()) +
                      ", expected " + std::to_string(dim));
    }
    if (rec.regime != regime) throw DataError("record '" + rec.instance_id + "' has a different regime");
    const double norm = l2_norm(rec.values);
    if (!(norm > 0.0)) throw DataError("record '" + rec.instance_id + "' is a zero vector");
    for (float v : rec.values) index.unit_rows_.push_back(static_cast<double>(v) / norm);
    index.ids_.push_back(rec.instance_id);
  }
  return index;
}

std::vector<KnnIndex::Hit> KnnIndex::query(std::span<const float> query, std::size_t k,
                                           const std::set<std::string, std::less<>>& exclude) const {
  if (query.size() != dim_) {
    throw DataError("query has dim " + std::to_string(query.size()) + ", index has dim " + std::to_string(dim_));
  }
  const double qnorm = l2_norm(query);
  if (!(qnorm > 0.0)) throw DataError("query is a zero vector");
  std::vector<double> q(dim_);
  for (std::size_t d = 0; d < dim_; ++d) q[d] = static_cast<double>(query[d]) / qnorm;

  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!exclude.empty() && exclude.contains(ids_[i])) continue;
    const double* row = unit_rows_.data() + i * dim_;
    double dot = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) dot += q[d] * row[d];
    scored.emplace_back(dot, i);
  }
  const std::size_t take = std::min(k, scored.size());
  auto better = [this](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return ids_[a.second] < ids_[b.second];
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);

  std::vector<Hit> hits;
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) hits.push_back({ids_[scored[i].second], scored[i].first});
  return hits;
}

KnnIndex build_index(const EmbeddingStore& store) { return KnnIndex::build(store.regime(), store.records()); }

std::vector<KnnIndex::Hit> knn_query(const KnnIndex& index, std::span<const float> query, std::size_t k,
                                     const std::set<std::string, std::less<>>& exclude) {
  if (k == 0) throw UsageError("k must be at least 1");
  return index.query(query, k, exclude);
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::random_balanced: return "random_balanced";
    case Strategy::knn_sent: return "knn_sent";
    case Strategy::knn_entprompt: return "knn_entprompt";
    case Strategy::knn_ft: return "knn_ft";
  }
  return "random_balanced";
}

Strategy strategy_from_string(std::string_view s) {
  if (s == "random_balanced") return Strategy::random_balanced;
  if (s == "knn_sent") return Strategy::knn_sent;
  if (s == "knn_entprompt") return Strategy::knn_entprompt;
  if (s == "knn_ft") return Strategy::knn_ft;
  throw UsageError("unknown strategy '" + std::string(s) + "'");
}

std::optional<Regime> strategy_regime(Strategy s) {
  switch (s) {
    case Strategy::knn_sent: return Regime::sent;
    case Strategy::knn_entprompt: return Regime::entprompt;
    case Strategy::knn_ft: return Regime::ft;
    case Strategy::random_balanced: break;
  }
  return std::nullopt;
}

std::optional<ShotRange> default_shot_range(std::string_view dataset) {
  std::string key;
  for (char c : dataset) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (key == "semeval") return ShotRange{5, 30};
  if (key == "tacred") return ShotRange{5, 15};
  if (key == "scierc") return ShotRange{5, 30};
  if (key == "ace05") return ShotRange{5, 25};
  return std::nullopt;
}

std::optional<std::string> check_shot_range(std::size_t k, std::string_view dataset,
                                            std::optional<ShotRange> override_range) {
  auto range = override_range ? override_range : default_shot_range(dataset);
  if (!range) return std::nullopt;
  if (k < range->lower || (range->upper != 0 && k > range->upper)) {
    return "k=" + std::to_string(k) + " is outside the configured shot range [" + std::to_string(range->lower) +
           ", " + std::to_string(range->upper) + "] for " + std::string(dataset);
  }
  return std::nullopt;
}

void DemonstrationSet::push_back(Demonstration d, std::optional<double> score) {
  items.push_back(std::move(d));
  scores.push_back(score);
}

std::vector<std::string> balanced_label_order(const DatasetSplit& train, std::uint64_t seed) {
  std::vector<std::string> labels;
  for (const auto& [key, count] : label_histogram(train)) labels.push_back(key);
  Rng rng(mix_seed(seed, "label-order"));
  rng.shuffle(labels);
  return labels;
}

DemonstrationSet select_random_balanced(const DatasetSplit& train, const SelectionRequest& request) {
  if (request.strategy != Strategy::random_balanced) throw UsageError("select_random_balanced needs random_balanced");
  if (request.k == 0) throw UsageError("k must be at least 1");
  const std::string test_id = request.test_instance ? request.test_instance->id : std::string();

  std::map<std::string, std::vector<const REInstance*>> pools;
  std::size_t available = 0;
  for (const auto& inst : train.instances()) {
    if (inst.id == test_id) continue;
    pools[train.schema().verbalize(inst.gold_label)].push_back(&inst);
    ++available;
  }
  if (request.k > available) {
    throw UsageError("k=" + std::to_string(request.k) + " exceeds the " + std::to_string(available) +
                     " available train instances");
  }
  for (auto& [key, pool] : pools) {
    Rng rng(mix_seed(request.seed, key));
    rng.shuffle(pool);
  }

  const auto order = balanced_label_order(train, request.seed);
  std::map<std::string, std::size_t> taken;
  DemonstrationSet out;
  std::size_t turn = 0;
  while (out.size() < request.k) {
    const auto& key = order[turn++ % order.size()];
    auto& pool = pools[key];
    auto& used = taken[key];
    if (used == pool.size()) continue;
    const REInstance* inst = pool[used++];
    out.push_back(Demonstration{*inst, inst->gold_label, std::nullopt}, std::nullopt);
  }
  return out;
}

DemonstrationSet select_knn(const DatasetSplit& train, const KnnIndex& index, const SelectionRequest& request,
                            std::span<const float> test_vector) {
  const auto regime = strategy_regime(request.strategy);
  if (!regime) throw UsageError("select_knn needs a kNN strategy");
  if (*regime != index.regime()) {
    throw UsageError("strategy " + std::string(to_string(request.strategy)) + " cannot use a " +
                     std::string(to_string(index.regime())) + " index");
  }
  if (test_vector.empty()) throw DataError("missing test vector");
  if (request.k == 0) throw UsageError("k must be at least 1");

  std::set<std::string, std::less<>> exclude;
  if (request.test_instance) exclude.insert(request.test_instance->id);
  DemonstrationSet out;
  for (auto& hit : index.query(test_vector, request.k, exclude)) {
    const REInstance* inst = train.find(hit.id);
    if (inst == nullptr) throw DataError("indexed id '" + hit.id + "' is not in the train split");
    out.push_back(Demonstration{*inst, inst->gold_label, std::nullopt}, hit.score);
  }
  return out;
}

nlohmann::ordered_json selection_to_json(const SelectionRequest& request, const DemonstrationSet& set) {
  nlohmann::ordered_json j;
  j["test_id"] = request.test_instance ? request.test_instance->id : std::string();
  j["strategy"] = std::string(to_string(request.strategy));
  j["k"] = request.k;
  j["items"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < set.size(); ++i) {
    nlohmann::ordered_json item;
    item["id"] = set.items[i].instance.id;
    if (set.scores[i]) {
      item["score"] = *set.scores[i];
    } else {
      item["score"] = "random";
    }
    j["items"].push_back(std::move(item));
  }
  return j;
}

}  // namespace gptre
