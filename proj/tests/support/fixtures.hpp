#pragma once

#include <atomic>
#include <cstdio>
#include <unistd.h>
#include <filesystem>
#include <string>
#include <vector>

#include "gptre/corpus.hpp"
#include "gptre/embed.hpp"
#include "gptre/util.hpp"

namespace fixtures {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("gptre-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline gptre::REInstance make_instance(std::string id, std::vector<std::string> tokens, std::size_t s_begin,
                                       std::size_t s_end, std::size_t o_begin, std::size_t o_end,
                                       gptre::RelationLabel label,
                                       std::optional<std::string> s_type = std::nullopt,
                                       std::optional<std::string> o_type = std::nullopt) {
  gptre::REInstance inst;
  inst.id = std::move(id);
  inst.tokens = std::move(tokens);
  auto span_text = [&](std::size_t b, std::size_t e) {
    return gptre::join(std::span<const std::string>(inst.tokens.data() + b, e - b), " ");
  };
  inst.subject = {span_text(s_begin, s_end), s_begin, s_end, std::move(s_type), gptre::Role::subject};
  inst.object = {span_text(o_begin, o_end), o_begin, o_end, std::move(o_type), gptre::Role::object};
  inst.gold_label = std::move(label);
  return inst;
}

// "He has a sister Lisa ." with PER-typed entities.
inline gptre::REInstance he_lisa(const gptre::RelationLabel& label, bool with_period = true, bool typed = true) {
  std::vector<std::string> toks{"He", "has", "a", "sister", "Lisa"};
  if (with_period) toks.push_back(".");
  return make_instance("he-lisa", toks, 0, 1, 4, 5, label, typed ? std::optional<std::string>("PER") : std::nullopt,
                       typed ? std::optional<std::string>("PER") : std::nullopt);
}

inline std::vector<std::string> label_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("rel" + std::to_string(i));
  return out;
}

// Filler sentence "s<id> ... o<id>" with a few seeded words in between.
inline gptre::REInstance synthetic_instance(const std::string& id, const gptre::RelationLabel& label,
                                            gptre::Rng& rng) {
  std::vector<std::string> toks{"s_" + id};
  const std::size_t filler = 2 + rng.below(5);
  for (std::size_t i = 0; i < filler; ++i) toks.push_back("w" + std::to_string(rng.below(40)));
  toks.push_back("o_" + id);
  toks.push_back(".");
  return make_instance(id, toks, 0, 1, toks.size() - 2, toks.size() - 1, label);
}

// counts[i] instances of label i, then `nulls` NULL instances; ids prefix+index.
inline gptre::DatasetSplit synthetic_split(const gptre::RelationSchema& schema, const std::vector<std::size_t>& counts,
                                           std::size_t nulls, const std::string& prefix, std::uint64_t seed,
                                           gptre::SplitName name = gptre::SplitName::train) {
  gptre::Rng rng(seed);
  std::vector<gptre::REInstance> out;
  const auto classes = schema.classes();
  std::size_t next = 0;
  auto id = [&] {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%05zu", prefix.c_str(), next++);
    return std::string(buf);
  };
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) out.push_back(synthetic_instance(id(), classes.at(c), rng));
  }
  for (std::size_t i = 0; i < nulls; ++i) out.push_back(synthetic_instance(id(), schema.null_label(), rng));
  return gptre::DatasetSplit(name, schema, std::move(out));
}

// One-hot vector per class (NULL last) written as an "ft" store.
inline gptre::EmbeddingStore one_hot_store(const gptre::DatasetSplit& split) {
  const auto classes = split.schema().classes_with_null();
  gptre::EmbeddingStore store(gptre::Regime::ft, classes.size());
  for (const auto& inst : split.instances()) {
    std::vector<float> v(classes.size(), 0.0f);
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (classes[c] == inst.gold_label) v[c] = 1.0f;
    }
    store.append({inst.id, gptre::Regime::ft, std::move(v)});
  }
  return store;
}

// Gaussian-ish random vectors (sum of uniforms), seeded.
inline gptre::EmbeddingStore random_store(const gptre::DatasetSplit& split, gptre::Regime regime, std::size_t dim,
                                          std::uint64_t seed) {
  gptre::Rng rng(seed);
  gptre::EmbeddingStore store(regime, dim);
  for (const auto& inst : split.instances()) {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(rng.unit() + rng.unit() + rng.unit() - 1.5);
    store.append({inst.id, regime, std::move(v)});
  }
  return store;
}

}  // namespace fixtures
