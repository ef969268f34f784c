#include "gptre/embed.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <optional>

#include "gptre/errors.hpp"

namespace gptre {

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::sent: return "sent";
    case Regime::entprompt: return "entprompt";
    case Regime::ft: return "ft";
  }
  return "sent";
}

Regime regime_from_string(std::string_view s) {
  if (s == "sent") return Regime::sent;
  if (s == "entprompt") return Regime::entprompt;
  if (s == "ft") return Regime::ft;
  throw DataError("unknown embedding regime '" + std::string(s) + "'");
}

double l2_norm(std::span<const float> v) {
  double sum = 0.0;
  for (float x : v) sum += static_cast<double>(x) * x;
  return std::sqrt(sum);
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DataError("cosine of vectors with different dimensions");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
  return dot / (l2_norm(a) * l2_norm(b));
}

EmbeddingStore::EmbeddingStore(Regime regime, std::size_t dim, nlohmann::json meta)
    : regime_(regime), dim_(dim), meta_(std::move(meta)) {
  if (dim_ == 0) throw DataError("embedding dimension must be positive");
}

void EmbeddingStore::append(EmbeddingRecord record) {
  if (record.regime != regime_) {
    throw DataError("record '" + record.instance_id + "' has regime " + std::string(to_string(record.regime)) +
                    " but the store holds " + std::string(to_string(regime_)));
  }
  if (record.dim() != dim_) {
    throw DataError("record '" + record.instance_id + "' has dim " + std::to_string(record.dim()) +
                    " but the store holds dim " + std::to_string(dim_));
  }
  if (!(l2_norm(record.values) > 0.0)) {
    throw DataError("record '" + record.instance_id + "' is a zero vector");
  }
  if (!by_id_.emplace(record.instance_id, records_.size()).second) {
    throw DataError("duplicate vector id '" + record.instance_id + "'");
  }
  records_.push_back(std::move(record));
}

const EmbeddingRecord* EmbeddingStore::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

std::string vector_file_header(const EmbeddingStore& store) {
  std::string out = "{\"format\":\"" + std::string(kVectorFormat) + "\",\"dim\":" + std::to_string(store.dim()) +
                    ",\"regime\":\"" + std::string(to_string(store.regime())) + "\"";
  if (!store.meta().empty()) out += ",\"meta\":" + store.meta().dump();
  out += "}";
  return out;
}

std::string vector_file_record(const EmbeddingRecord& record) {
  std::string out = "{\"id\":" + nlohmann::json(record.instance_id).dump() + ",\"regime\":\"" +
                    std::string(to_string(record.regime)) + "\",\"dim\":" + std::to_string(record.dim()) +
                    ",\"values\":[";
  for (std::size_t i = 0; i < record.values.size(); ++i) {
    if (i > 0) out += ',';
    out += format_float9(record.values[i]);
  }
  out += "]}";
  return out;
}

EmbeddingStore read_vector_file(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  std::optional<EmbeddingStore> store;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1) + ": ";
    try {
      const auto j = nlohmann::json::parse(lines[i]);
      if (!store) {
        if (j.value("format", std::string()) != kVectorFormat) {
          throw DataError("missing or unsupported vector file header");
        }
        store.emplace(regime_from_string(j.at("regime").get<std::string>()), j.at("dim").get<std::size_t>(),
                      j.value("meta", nlohmann::json::object()));
        continue;
      }
      EmbeddingRecord rec;
      rec.instance_id = j.at("id").get<std::string>();
      rec.regime = regime_from_string(j.at("regime").get<std::string>());
      rec.values = j.at("values").get<std::vector<float>>();
      if (j.at("dim").get<std::size_t>() != rec.values.size()) {
        throw DataError("record '" + rec.instance_id + "' declares dim " + j.at("dim").dump() + " but has " +
                        std::to_string(rec.values.size()) + " values");
      }
      store->append(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  if (!store) throw DataError(path.string() + ": empty vector file (no header)");
  return std::move(*store);
}

void write_vector_file(const EmbeddingStore& store, const std::filesystem::path& path) {
  std::string out = vector_file_header(store) + "\n";
  for (const auto& rec : store.records()) out += vector_file_record(rec) + "\n";
  write_file_atomic(path, out);
}

HashProjectionProvider::HashProjectionProvider(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim_ == 0) throw UsageError("hash projection dimension must be positive");
}

std::string HashProjectionProvider::name() const {
  return "hash-projection-d" + std::to_string(dim_) + "-s" + std::to_string(seed_);
}

std::vector<std::vector<float>> HashProjectionProvider::embed(std::span<const std::string> texts) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::vector<double> acc(dim_, 0.0);
    for (auto token : split_whitespace(text)) {
      for (char& c : token) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      Rng rng(mix_seed(seed_, token));
      for (auto& a : acc) a += rng.unit() * 2.0 - 1.0;
    }
    out.emplace_back(acc.begin(), acc.end());
  }
  return out;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(HttpEndpoint endpoint, std::size_t dim, std::string model_name,
                                             nlohmann::json metadata)
    : endpoint_(std::move(endpoint)), dim_(dim), model_name_(std::move(model_name)), metadata_(std::move(metadata)) {}

std::vector<std::vector<float>> HttpEmbeddingProvider::embed(std::span<const std::string> texts) {
  nlohmann::json body;
  body["texts"] = std::vector<std::string>(texts.begin(), texts.end());
  const auto response = post_json(endpoint_, body);
  try {
    return response.at("vectors").get<std::vector<std::vector<float>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("embedding response lacks \"vectors\": ") + e.what());
  }
}

std::string entity_prompt_text(const REInstance& instance) {
  return "The relation between '" + instance.subject.text + "' and '" + instance.object.text +
         "' in the context: " + instance.sentence();
}

MarkedSequence mark_entities(const REInstance& instance) {
  auto marker = [](std::string_view kind, const EntityMention& m, bool closing) {
    std::string out = closing ? "[/" : "[";
    out += kind;
    if (m.entity_type) out += "_" + *m.entity_type;
    out += "]";
    return out;
  };
  MarkedSequence seq;
  seq.tokens.push_back("[CLS]");
  const auto& sub = instance.subject;
  const auto& obj = instance.object;
  for (std::size_t i = 0; i <= instance.tokens.size(); ++i) {
    if (i == sub.end) seq.tokens.push_back(marker("SUB", sub, true));
    if (i == obj.end) seq.tokens.push_back(marker("OBJ", obj, true));
    if (i == sub.start) {
      seq.subject_begin = seq.tokens.size();
      seq.tokens.push_back(marker("SUB", sub, false));
    }
    if (i == obj.start) {
      seq.object_begin = seq.tokens.size();
      seq.tokens.push_back(marker("OBJ", obj, false));
    }
    if (i < instance.tokens.size()) seq.tokens.push_back(instance.tokens[i]);
  }
  seq.tokens.push_back("[SEP]");
  return seq;
}

EmbeddingStore embed_split(const DatasetSplit& split, EmbeddingProvider& provider, Regime regime,
                           const std::filesystem::path& store_path, const EmbedOptions& options) {
  if (regime == Regime::ft) throw UsageError("ft vectors are imported, not embedded");
  nlohmann::json meta = provider.metadata();
  meta["provider"] = provider.name();

  std::optional<EmbeddingStore> loaded;
  if (std::filesystem::exists(store_path)) {
    loaded.emplace(read_vector_file(store_path));
    if (loaded->regime() != regime) {
      throw DataError(store_path.string() + " holds regime " + std::string(to_string(loaded->regime())) +
                      ", requested " + std::string(to_string(regime)));
    }
    if (loaded->dim() != provider.dim()) {
      throw DataError(store_path.string() + " holds dim " + std::to_string(loaded->dim()) + " but provider " +
                      provider.name() + " produces dim " + std::to_string(provider.dim()));
    }
  } else {
    loaded.emplace(regime, provider.dim(), meta);
    write_file_atomic(store_path, vector_file_header(*loaded) + "\n");
  }
  EmbeddingStore store = std::move(*loaded);

  std::vector<const REInstance*> pending;
  for (const auto& inst : split.instances()) {
    if (!store.contains(inst.id)) pending.push_back(&inst);
  }
  if (pending.empty()) return store;

  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  const std::size_t batches = (pending.size() + batch - 1) / batch;
  std::vector<std::optional<std::vector<EmbeddingRecord>>> results(batches);

  auto run_batch = [&](std::size_t b) {
    const std::size_t begin = b * batch;
    const std::size_t end = std::min(pending.size(), begin + batch);
    std::vector<std::string> texts;
    for (std::size_t i = begin; i < end; ++i) {
      texts.push_back(regime == Regime::entprompt ? entity_prompt_text(*pending[i]) : pending[i]->sentence());
    }
    auto vectors = with_retries(options.retry, [&] { return provider.embed(texts); }, options.sleep);
    if (vectors.size() != texts.size()) {
      throw ProviderError("provider returned " + std::to_string(vectors.size()) + " vectors for " +
                          std::to_string(texts.size()) + " texts");
    }
    std::vector<EmbeddingRecord> recs;
    for (std::size_t i = begin; i < end; ++i) {
      recs.push_back({pending[i]->id, regime, std::move(vectors[i - begin])});
    }
    results[b] = std::move(recs);
  };

  std::exception_ptr failure;
  try {
    parallel_for_bounded(batches, options.max_in_flight, run_batch);
  } catch (...) {
    failure = std::current_exception();
  }

  // Persist the contiguous prefix of completed batches so a re-run resumes.
  std::ofstream out(store_path, std::ios::binary | std::ios::app);
  if (!out) throw DataError("cannot append to " + store_path.string());
  for (auto& r : results) {
    if (!r) break;
    for (auto& rec : *r) {
      const std::string line = vector_file_record(rec);
      store.append(std::move(rec));
      out << line << '\n';
    }
  }
  out.flush();
  if (failure) std::rethrow_exception(failure);
  return store;
}

EmbeddingStore import_ft_vectors(const std::filesystem::path& path, const DatasetSplit& split) {
  EmbeddingStore store = read_vector_file(path);
  if (store.regime() != Regime::ft) {
    throw DataError(path.string() + " holds regime " + std::string(to_string(store.regime())) + ", expected ft");
  }
  for (const auto& rec : store.records()) {
    if (split.find(rec.instance_id) == nullptr) {
      throw DataError(path.string() + ": vector id '" + rec.instance_id + "' is not in the " +
                      std::string(to_string(split.name())) + " split");
    }
  }
  return store;
}

}  // namespace gptre
