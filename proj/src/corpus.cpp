#include "gptre/corpus.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "gptre/errors.hpp"
#include "gptre/util.hpp"

namespace gptre {

namespace {

constexpr std::string_view kForwardSuffix = "(e1,e2)";
constexpr std::string_view kBackwardSuffix = "(e2,e1)";

}  // namespace

std::string_view to_string(Direction d) { return d == Direction::sub_obj ? "sub_obj" : "obj_sub"; }

std::string_view to_string(SplitName s) {
  switch (s) {
    case SplitName::train: return "train";
    case SplitName::dev: return "dev";
    case SplitName::test: return "test";
  }
  return "test";
}

Direction direction_from_string(std::string_view s) {
  if (s == "sub_obj") return Direction::sub_obj;
  if (s == "obj_sub") return Direction::obj_sub;
  throw DataError("unknown direction '" + std::string(s) + "'");
}

SplitName split_name_from_string(std::string_view s) {
  if (s == "train") return SplitName::train;
  if (s == "dev") return SplitName::dev;
  if (s == "test") return SplitName::test;
  throw DataError("unknown split name '" + std::string(s) + "'");
}

std::string REInstance::sentence() const { return join(tokens, " "); }

RelationSchema::RelationSchema(std::vector<std::string> labels, std::string null_name, bool directional)
    : labels_(std::move(labels)), null_name_(std::move(null_name)), directional_(directional) {
  if (labels_.empty()) throw DataError("relation schema has no labels");
  if (null_name_.empty()) throw DataError("relation schema has an empty NULL sentinel");
  std::set<std::string> seen;
  for (const auto& l : labels_) {
    if (l.empty()) throw DataError("relation schema contains an empty label");
    if (l == null_name_) throw DataError("relation schema lists the NULL sentinel '" + l + "' as a label");
    if (!seen.insert(l).second) throw DataError("relation schema lists '" + l + "' twice");
  }
}

RelationLabel RelationSchema::null_label() const { return RelationLabel{null_name_, true, std::nullopt}; }

RelationLabel RelationSchema::make_label(std::string_view name, std::optional<Direction> direction) const {
  if (name == null_name_) {
    if (direction) throw DataError("NULL label '" + std::string(name) + "' cannot carry a direction");
    return null_label();
  }
  if (std::find(labels_.begin(), labels_.end(), name) == labels_.end()) {
    throw DataError("unknown label '" + std::string(name) + "'");
  }
  if (directional_ && !direction) {
    throw DataError("label '" + std::string(name) + "' needs a direction in a directional schema");
  }
  if (!directional_ && direction) {
    throw DataError("label '" + std::string(name) + "' has a direction but the schema is not directional");
  }
  return RelationLabel{std::string(name), false, direction};
}

bool RelationSchema::is_valid(const RelationLabel& label) const {
  try {
    RelationLabel rebuilt = make_label(label.name, label.direction);
    return rebuilt == label;
  } catch (const DataError&) {
    return false;
  }
}

std::vector<RelationLabel> RelationSchema::classes() const {
  std::vector<RelationLabel> out;
  for (const auto& l : labels_) {
    if (directional_) {
      out.push_back({l, false, Direction::sub_obj});
      out.push_back({l, false, Direction::obj_sub});
    } else {
      out.push_back({l, false, std::nullopt});
    }
  }
  return out;
}

std::vector<RelationLabel> RelationSchema::classes_with_null() const {
  auto out = classes();
  out.push_back(null_label());
  return out;
}

std::string verbalize(const RelationLabel& label) {
  if (label.is_null || !label.direction) return label.name;
  return label.name + std::string(*label.direction == Direction::sub_obj ? kForwardSuffix : kBackwardSuffix);
}

std::string RelationSchema::verbalize(const RelationLabel& label) const { return gptre::verbalize(label); }

std::optional<RelationLabel> RelationSchema::from_verbalized(std::string_view text) const {
  for (const auto& c : classes_with_null()) {
    if (verbalize(c) == text) return c;
  }
  return std::nullopt;
}

nlohmann::json RelationSchema::to_json() const {
  nlohmann::ordered_json j;
  j["labels"] = labels_;
  j["null_name"] = null_name_;
  j["directional"] = directional_;
  return j;
}

RelationSchema RelationSchema::from_json(const nlohmann::json& j) {
  try {
    return RelationSchema(j.at("labels").get<std::vector<std::string>>(),
                          j.value("null_name", std::string(kDefaultNullName)), j.value("directional", false));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed schema: ") + e.what());
  }
}

RelationSchema load_schema(const std::filesystem::path& path) {
  try {
    return RelationSchema::from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_schema(const RelationSchema& schema, const std::filesystem::path& path) {
  write_file_atomic(path, schema.to_json().dump(2) + "\n");
}

DatasetSplit::DatasetSplit(SplitName name, RelationSchema schema, std::vector<REInstance> instances)
    : name_(name), schema_(std::move(schema)), instances_(std::move(instances)) {
  by_id_.reserve(instances_.size());
  for (std::size_t i = 0; i < instances_.size(); ++i) {
    validate_instance(instances_[i], schema_);
    if (!by_id_.emplace(instances_[i].id, i).second) {
      throw DataError("duplicate instance id '" + instances_[i].id + "'");
    }
  }
}

const REInstance* DatasetSplit::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &instances_[it->second];
}

namespace {

void validate_mention(const EntityMention& m, const REInstance& inst, std::string_view which) {
  if (!(m.start < m.end && m.end <= inst.tokens.size())) {
    std::ostringstream msg;
    msg << which << " span [" << m.start << ", " << m.end << ") is out of bounds for "
        << inst.tokens.size() << " tokens";
    throw DataError(msg.str());
  }
  std::vector<std::string> slice(inst.tokens.begin() + static_cast<std::ptrdiff_t>(m.start),
                                 inst.tokens.begin() + static_cast<std::ptrdiff_t>(m.end));
  if (join(slice, " ") != m.text) {
    throw DataError(std::string(which) + " text '" + m.text + "' does not match its span '" +
                    join(slice, " ") + "'");
  }
}

}  // namespace

void validate_instance(const REInstance& inst, const RelationSchema& schema) {
  if (inst.id.empty()) throw DataError("instance has an empty id");
  for (const auto& t : inst.tokens) {
    if (t.empty() || contains_whitespace(t)) {
      throw DataError("instance '" + inst.id + "' has an empty or whitespace-bearing token");
    }
  }
  validate_mention(inst.subject, inst, "subject");
  validate_mention(inst.object, inst, "object");
  if (inst.subject.start < inst.object.end && inst.object.start < inst.subject.end) {
    throw DataError("instance '" + inst.id + "' has overlapping subject and object spans");
  }
  if (!schema.is_valid(inst.gold_label)) {
    throw DataError("instance '" + inst.id + "' has unknown label '" + schema.verbalize(inst.gold_label) + "'");
  }
}

namespace {

EntityMention mention_from_json(const nlohmann::json& j, Role role) {
  EntityMention m;
  m.start = j.at("start").get<std::size_t>();
  m.end = j.at("end").get<std::size_t>();
  m.text = j.at("text").get<std::string>();
  if (j.contains("type") && !j.at("type").is_null()) m.entity_type = j.at("type").get<std::string>();
  m.role = role;
  return m;
}

nlohmann::ordered_json mention_to_json(const EntityMention& m) {
  nlohmann::ordered_json j;
  j["start"] = m.start;
  j["end"] = m.end;
  j["type"] = m.entity_type ? nlohmann::ordered_json(*m.entity_type) : nlohmann::ordered_json(nullptr);
  j["text"] = m.text;
  return j;
}

}  // namespace

REInstance instance_from_json(const nlohmann::json& j, const RelationSchema& schema) {
  REInstance inst;
  try {
    inst.id = j.at("id").get<std::string>();
    inst.tokens = j.at("tokens").get<std::vector<std::string>>();
    inst.subject = mention_from_json(j.at("subj"), Role::subject);
    inst.object = mention_from_json(j.at("obj"), Role::object);
    std::optional<Direction> direction;
    if (j.contains("direction") && !j.at("direction").is_null()) {
      direction = direction_from_string(j.at("direction").get<std::string>());
    }
    inst.gold_label = schema.make_label(j.at("label").get<std::string>(), direction);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed record: ") + e.what());
  }
  validate_instance(inst, schema);
  return inst;
}

nlohmann::ordered_json instance_to_json(const REInstance& inst) {
  nlohmann::ordered_json j;
  j["id"] = inst.id;
  j["tokens"] = inst.tokens;
  j["subj"] = mention_to_json(inst.subject);
  j["obj"] = mention_to_json(inst.object);
  j["label"] = inst.gold_label.name;
  j["direction"] = inst.gold_label.direction ? nlohmann::ordered_json(std::string(to_string(*inst.gold_label.direction)))
                                             : nlohmann::ordered_json(nullptr);
  return j;
}

DatasetSplit load_dataset(const std::filesystem::path& path, const RelationSchema& schema,
                          std::optional<SplitName> name) {
  if (!name) {
    const std::string stem = path.stem().string();
    if (stem.find("train") != std::string::npos) {
      name = SplitName::train;
    } else if (stem.find("dev") != std::string::npos) {
      name = SplitName::dev;
    } else {
      name = SplitName::test;
    }
  }
  const auto lines = read_lines(path);
  std::vector<REInstance> instances;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1) + ": ";
    try {
      auto inst = instance_from_json(nlohmann::json::parse(lines[i]), schema);
      if (!ids.insert(inst.id).second) throw DataError("duplicate instance id '" + inst.id + "'");
      instances.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + "malformed record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  return DatasetSplit(*name, schema, std::move(instances));
}

std::string serialize_dataset(const DatasetSplit& split) {
  std::string out;
  for (const auto& inst : split.instances()) {
    out += instance_to_json(inst).dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const DatasetSplit& split, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_dataset(split));
}

std::map<std::string, std::size_t> label_histogram(const DatasetSplit& split) {
  std::map<std::string, std::size_t> hist;
  for (const auto& inst : split.instances()) ++hist[split.schema().verbalize(inst.gold_label)];
  return hist;
}

SplitStats split_stats(const DatasetSplit& split) {
  SplitStats stats;
  stats.histogram = label_histogram(split);
  stats.total = split.size();
  auto it = stats.histogram.find(split.schema().null_name());
  stats.null_count = it == stats.histogram.end() ? 0 : it->second;
  stats.null_fraction = stats.total == 0 ? 0.0 : static_cast<double>(stats.null_count) / static_cast<double>(stats.total);
  return stats;
}

std::map<std::string, std::size_t> stratified_quotas(const std::map<std::string, std::size_t>& counts,
                                                     std::size_t n) {
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0},
                                            [](std::size_t acc, const auto& kv) { return acc + kv.second; });
  std::map<std::string, std::size_t> quotas;
  if (total == 0) return quotas;
  if (n > total) throw UsageError("cannot allocate " + std::to_string(n) + " of " + std::to_string(total));

  struct Entry {
    std::string key;
    std::size_t count;
    std::size_t floor;
    std::uint64_t remainder;  // numerator over `total`
    bool needs_one;
  };
  std::vector<Entry> entries;
  std::size_t assigned = 0;
  for (const auto& [key, count] : counts) {
    const std::uint64_t scaled = static_cast<std::uint64_t>(n) * count;
    Entry e{key, count, static_cast<std::size_t>(scaled / total), scaled % total, false};
    e.needs_one = count > 0 && e.floor == 0 && 2 * e.remainder >= total;
    assigned += e.floor;
    entries.push_back(std::move(e));
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.needs_one != b.needs_one) return a.needs_one;
    if (a.remainder != b.remainder) return a.remainder > b.remainder;
    if (a.count != b.count) return a.count > b.count;
    return a.key < b.key;
  });
  std::size_t leftover = n - assigned;
  for (auto& e : entries) {
    std::size_t q = e.floor;
    if (leftover > 0 && e.remainder > 0) {
      ++q;
      --leftover;
    }
    quotas[e.key] = q;
  }
  return quotas;
}

DatasetSplit sample_stratified_subset(const DatasetSplit& split, std::int64_t n, std::uint64_t seed) {
  if (n <= 0) throw UsageError("subset size must be positive, got " + std::to_string(n));
  if (static_cast<std::uint64_t>(n) > split.size()) {
    throw UsageError("subset size " + std::to_string(n) + " exceeds split size " + std::to_string(split.size()));
  }
  const auto& schema = split.schema();
  std::map<std::string, std::vector<std::size_t>> pools;
  for (std::size_t i = 0; i < split.size(); ++i) {
    pools[schema.verbalize(split.instances()[i].gold_label)].push_back(i);
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& [key, pool] : pools) counts[key] = pool.size();
  const auto quotas = stratified_quotas(counts, static_cast<std::size_t>(n));

  std::vector<std::size_t> chosen;
  chosen.reserve(static_cast<std::size_t>(n));
  for (auto& [key, pool] : pools) {
    Rng rng(mix_seed(seed, key));
    rng.shuffle(pool);
    const std::size_t q = quotas.at(key);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(q));
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<REInstance> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) out.push_back(split.instances()[i]);
  return DatasetSplit(split.name(), schema, std::move(out));
}

}  // namespace gptre
