#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gptre/corpus.hpp"
#include "gptre/http.hpp"
#include "gptre/util.hpp"

namespace gptre {

enum class Regime { sent, entprompt, ft };

std::string_view to_string(Regime r);
Regime regime_from_string(std::string_view s);

inline constexpr std::string_view kVectorFormat = "rev1";

struct EmbeddingRecord {
  std::string instance_id;
  Regime regime = Regime::sent;
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
};

double l2_norm(std::span<const float> v);
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Append-only set of records sharing one regime and one dimension.
class EmbeddingStore {
 public:
  EmbeddingStore(Regime regime, std::size_t dim, nlohmann::json meta = nlohmann::json::object());

  Regime regime() const { return regime_; }
  std::size_t dim() const { return dim_; }
  const nlohmann::json& meta() const { return meta_; }
  const std::vector<EmbeddingRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  // Throws DataError on regime/dim mismatch, zero vector, or duplicate id.
  void append(EmbeddingRecord record);
  const EmbeddingRecord* find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }

 private:
  Regime regime_;
  std::size_t dim_;
  nlohmann::json meta_;
  std::vector<EmbeddingRecord> records_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// Vector file: a header line {"format":"rev1","dim":N,"regime":R[,"meta":{}]}
// followed by one {"id","regime","dim","values"} line per record. Values are
// written with 9 significant digits.
std::string vector_file_header(const EmbeddingStore& store);
std::string vector_file_record(const EmbeddingRecord& record);
EmbeddingStore read_vector_file(const std::filesystem::path& path);
void write_vector_file(const EmbeddingStore& store, const std::filesystem::path& path);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  // One vector per input text, same order. Must be deterministic.
  virtual std::vector<std::vector<float>> embed(std::span<const std::string> texts) = 0;
  // Recorded in the store header (e.g. truncation length).
  virtual nlohmann::json metadata() const { return nlohmann::json::object(); }
};

// Sum of per-token pseudo-random projections keyed by the lowercased token.
// Texts sharing tokens land close together; no model needed.
class HashProjectionProvider : public EmbeddingProvider {
 public:
  explicit HashProjectionProvider(std::size_t dim, std::uint64_t seed = 0);
  std::string name() const override;
  std::size_t dim() const override { return dim_; }
  std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// POST {"texts": [...]} -> {"vectors": [[...]]}.
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(HttpEndpoint endpoint, std::size_t dim, std::string model_name,
                        nlohmann::json metadata = nlohmann::json::object());
  std::string name() const override { return "http:" + model_name_; }
  std::size_t dim() const override { return dim_; }
  std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;
  nlohmann::json metadata() const override { return metadata_; }

 private:
  HttpEndpoint endpoint_;
  std::size_t dim_;
  std::string model_name_;
  nlohmann::json metadata_;
};

// The relation between '<subject>' and '<object>' in the context: <tokens>
std::string entity_prompt_text(const REInstance& instance);

// Encoder input with entity markers, as consumed by the relation-representation
// trainer: [CLS] [SUB_T] ... [/SUB_T] ... [OBJ_T] ... [/OBJ_T] ... [SEP].
// The "_T" suffix is present only when the entity type is known.
struct MarkedSequence {
  std::vector<std::string> tokens;
  std::size_t subject_begin = 0;
  std::size_t object_begin = 0;

  std::string str() const { return join(tokens, " "); }
};
MarkedSequence mark_entities(const REInstance& instance);

struct EmbedOptions {
  std::size_t batch_size = 32;
  std::size_t max_in_flight = 4;
  RetryPolicy retry;
  Sleeper sleep = real_sleeper();
};

// Embeds every instance not already present in the store file at store_path,
// appending new records in split order. regime must be sent or entprompt.
EmbeddingStore embed_split(const DatasetSplit& split, EmbeddingProvider& provider, Regime regime,
                           const std::filesystem::path& store_path, const EmbedOptions& options = {});

// Loads an "ft" vector file and checks every id against the split.
EmbeddingStore import_ft_vectors(const std::filesystem::path& path, const DatasetSplit& split);

}  // namespace gptre
