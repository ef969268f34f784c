#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace gptre {

inline constexpr std::string_view kDefaultNullName = "NULL";

enum class Direction { sub_obj, obj_sub };
enum class Role { subject, object };
enum class SplitName { train, dev, test };

std::string_view to_string(Direction d);
std::string_view to_string(SplitName s);
Direction direction_from_string(std::string_view s);
SplitName split_name_from_string(std::string_view s);

struct RelationLabel {
  std::string name;
  bool is_null = false;
  std::optional<Direction> direction;

  friend bool operator==(const RelationLabel&, const RelationLabel&) = default;
};

// Label surface form: the name, plus "(e1,e2)" / "(e2,e1)" when directed.
std::string verbalize(const RelationLabel& label);

// Token span is half-open [start, end) over the owning instance's tokens.
struct EntityMention {
  std::string text;
  std::size_t start = 0;
  std::size_t end = 0;
  std::optional<std::string> entity_type;
  Role role = Role::subject;

  friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

struct REInstance {
  std::string id;
  std::vector<std::string> tokens;
  EntityMention subject;
  EntityMention object;
  RelationLabel gold_label;

  std::string sentence() const;

  friend bool operator==(const REInstance&, const REInstance&) = default;
};

// The label set R plus the NULL sentinel. For directional schemas every
// non-NULL label exists in both directions, and the verbalized form carries
// the direction suffix, e.g. "Cause-Effect(e1,e2)".
class RelationSchema {
 public:
  // Throws DataError on an empty label list, duplicates, or a label equal to
  // the NULL sentinel.
  RelationSchema(std::vector<std::string> labels, std::string null_name = std::string(kDefaultNullName),
                 bool directional = false);

  const std::vector<std::string>& label_names() const { return labels_; }
  const std::string& null_name() const { return null_name_; }
  bool directional() const { return directional_; }

  RelationLabel null_label() const;
  // Validates name/direction against the schema; throws DataError.
  RelationLabel make_label(std::string_view name, std::optional<Direction> direction) const;
  bool is_valid(const RelationLabel& label) const;

  // Concrete non-NULL classes in schema order (both directions for directional
  // schemas, sub_obj first).
  std::vector<RelationLabel> classes() const;
  // classes() followed by the NULL label.
  std::vector<RelationLabel> classes_with_null() const;

  std::string verbalize(const RelationLabel& label) const;
  std::optional<RelationLabel> from_verbalized(std::string_view text) const;

  nlohmann::json to_json() const;
  static RelationSchema from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> labels_;
  std::string null_name_;
  bool directional_ = false;
};

RelationSchema load_schema(const std::filesystem::path& path);
void save_schema(const RelationSchema& schema, const std::filesystem::path& path);

// Immutable after construction. Ids are unique and every gold label is valid
// under the schema.
class DatasetSplit {
 public:
  DatasetSplit(SplitName name, RelationSchema schema, std::vector<REInstance> instances);

  SplitName name() const { return name_; }
  const RelationSchema& schema() const { return schema_; }
  const std::vector<REInstance>& instances() const { return instances_; }
  std::size_t size() const { return instances_.size(); }
  bool empty() const { return instances_.empty(); }

  const REInstance* find(std::string_view id) const;

 private:
  SplitName name_;
  RelationSchema schema_;
  std::vector<REInstance> instances_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// Throws DataError if any EntityMention or REInstance invariant fails.
void validate_instance(const REInstance& instance, const RelationSchema& schema);

REInstance instance_from_json(const nlohmann::json& j, const RelationSchema& schema);
nlohmann::ordered_json instance_to_json(const REInstance& instance);

// Line-delimited records. Errors carry the 1-based line number.
DatasetSplit load_dataset(const std::filesystem::path& path, const RelationSchema& schema,
                          std::optional<SplitName> name = std::nullopt);
std::string serialize_dataset(const DatasetSplit& split);
void save_dataset(const DatasetSplit& split, const std::filesystem::path& path);

// Keys are verbalized labels.
std::map<std::string, std::size_t> label_histogram(const DatasetSplit& split);

struct SplitStats {
  std::size_t total = 0;
  std::size_t null_count = 0;
  double null_fraction = 0.0;
  std::map<std::string, std::size_t> histogram;
};
SplitStats split_stats(const DatasetSplit& split);

// Largest-remainder apportionment of n seats over counts. Keys with floor 0
// and quota >= 0.5 are served first when handing out remainder seats; after
// that, larger remainder wins, then larger count, then key order.
std::map<std::string, std::size_t> stratified_quotas(const std::map<std::string, std::size_t>& counts,
                                                     std::size_t n);

// Proportion-preserving sample of n instances; original order is kept.
DatasetSplit sample_stratified_subset(const DatasetSplit& split, std::int64_t n, std::uint64_t seed);

// Adapters for native dataset formats into the canonical model.
// TACRED JSON array: inclusive subj/obj end indices, "no_relation" -> NULL.
DatasetSplit load_tacred(const std::filesystem::path& path, const RelationSchema& schema,
                         SplitName name, std::string_view no_relation = "no_relation");
// SemEval-2010 Task 8 TRAIN_FILE.TXT / TEST_FILE_FULL.TXT layout. e1 is the
// subject; "(e2,e1)" labels get Direction::obj_sub.
DatasetSplit load_semeval(const std::filesystem::path& path, const RelationSchema& schema,
                          SplitName name);

}  // namespace gptre
