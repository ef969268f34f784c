#include "gptre/eval.hpp"

#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "gptre/errors.hpp"
#include "gptre/util.hpp"

namespace gptre {

std::string_view to_string(EvalSetting s) { return s == EvalSetting::with_null ? "with_null" : "without_null"; }

EvalSetting eval_setting_from_string(std::string_view s) {
  if (s == "with_null") return EvalSetting::with_null;
  if (s == "without_null") return EvalSetting::without_null;
  throw UsageError("unknown evaluation setting '" + std::string(s) + "'");
}

void PredictionSet::validate(const RelationSchema& schema) const {
  std::set<std::string_view> ids;
  for (const auto& p : pairs) {
    if (!ids.insert(p.test_id).second) throw DataError("duplicate prediction for '" + p.test_id + "'");
    if (!schema.is_valid(p.gold)) throw DataError("gold label '" + verbalize(p.gold) + "' is outside the schema");
    if (!schema.is_valid(p.pred)) throw DataError("predicted label '" + verbalize(p.pred) + "' is outside the schema");
  }
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : cells) {
    for (std::size_t c : row) t += c;
  }
  return t;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double ratio(std::size_t num, std::size_t den, bool* degenerate = nullptr) {
  if (den == 0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

// Harmonic mean of P and R written over counts, so 2/3 comes out as the
// correctly rounded 2/3.
double f1_of(std::size_t tp, std::size_t fp, std::size_t fn) { return ratio(2 * tp, 2 * tp + fp + fn); }

}  // namespace

std::string ConfusionMatrix::to_csv() const {
  std::string out = "gold\\pred";
  for (const auto& l : labels) out += "," + csv_field(l);
  out += "\n";
  for (std::size_t g = 0; g < labels.size(); ++g) {
    out += csv_field(labels[g]);
    for (std::size_t c : cells[g]) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

std::string ConfusionMatrix::to_long_csv() const {
  std::string out = "gold,pred,count\n";
  for (std::size_t g = 0; g < labels.size(); ++g) {
    for (std::size_t p = 0; p < labels.size(); ++p) {
      out += csv_field(labels[g]) + "," + csv_field(labels[p]) + "," + std::to_string(cells[g][p]) + "\n";
    }
  }
  return out;
}

ConfusionMatrix confusion_matrix(const PredictionSet& preds, const RelationSchema& schema) {
  preds.validate(schema);
  ConfusionMatrix m;
  const auto classes = schema.classes_with_null();
  std::map<std::string, std::size_t> index;
  for (const auto& c : classes) {
    index.emplace(schema.verbalize(c), m.labels.size());
    m.labels.push_back(schema.verbalize(c));
  }
  m.cells.assign(m.labels.size(), std::vector<std::size_t>(m.labels.size(), 0));
  for (const auto& p : preds.pairs) ++m.cells[index.at(verbalize(p.gold))][index.at(verbalize(p.pred))];
  return m;
}

std::optional<double> null_overprediction_rate(const PredictionSet& preds) {
  std::size_t gold_null = 0;
  std::size_t overpredicted = 0;
  for (const auto& p : preds.pairs) {
    if (!p.gold.is_null) continue;
    ++gold_null;
    if (!p.pred.is_null) ++overpredicted;
  }
  if (gold_null == 0) return std::nullopt;
  return static_cast<double>(overpredicted) / static_cast<double>(gold_null);
}

EvalReport score(const PredictionSet& preds, const RelationSchema& schema, EvalSetting setting) {
  if (preds.pairs.empty()) throw DataError("cannot score an empty prediction set");
  EvalReport r;
  r.setting = setting;
  r.confusion = confusion_matrix(preds, schema);

  for (const auto& p : preds.pairs) {
    if (p.parse_status == ParseStatus::fallback_null) ++r.parse_fallback_count;
    if (setting == EvalSetting::without_null) {
      if (p.gold.is_null) throw DataError("gold-NULL pair '" + p.test_id + "' in the without_null setting");
      if (p.pred == p.gold) {
        ++r.tp;
      } else {
        ++r.fp;
        ++r.fn;
      }
      continue;
    }
    const bool correct = p.pred == p.gold;
    if (correct && !p.gold.is_null) ++r.tp;
    if (!p.pred.is_null && !correct) ++r.fp;
    if (!p.gold.is_null && !correct) ++r.fn;
  }
  r.micro_precision = ratio(r.tp, r.tp + r.fp, &r.precision_degenerate);
  r.micro_recall = ratio(r.tp, r.tp + r.fn, &r.recall_degenerate);
  r.micro_f1 = f1_of(r.tp, r.fp, r.fn);

  const auto& m = r.confusion;
  const std::size_t n = m.labels.size();
  for (std::size_t l = 0; l < n; ++l) {
    LabelScores s;
    for (std::size_t o = 0; o < n; ++o) {
      s.support += m.cells[l][o];
      if (o == l) continue;
      s.fn += m.cells[l][o];
      s.fp += m.cells[o][l];
    }
    s.tp = m.cells[l][l];
    s.precision = ratio(s.tp, s.tp + s.fp);
    s.recall = ratio(s.tp, s.tp + s.fn);
    s.f1 = f1_of(s.tp, s.fp, s.fn);
    r.per_label.emplace_back(m.labels[l], s);
  }
  r.null_overprediction_rate = null_overprediction_rate(preds);
  return r;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["setting"] = std::string(gptre::to_string(setting));
  j["micro"] = {{"p", micro_precision}, {"r", micro_recall}, {"f1", micro_f1}};
  j["counts"] = {{"tp", tp}, {"fp", fp}, {"fn", fn}};
  j["degenerate"] = {{"precision", precision_degenerate}, {"recall", recall_degenerate}};
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [label, s] : per_label) {
    per[label] = {{"p", s.precision}, {"r", s.recall}, {"f1", s.f1}, {"support", s.support}};
  }
  j["per_label"] = per;
  j["confusion"] = confusion.cells;
  j["labels"] = confusion.labels;
  j["null_overprediction"] =
      null_overprediction_rate ? nlohmann::ordered_json(*null_overprediction_rate) : nlohmann::ordered_json(nullptr);
  j["parse_fallback_count"] = parse_fallback_count;
  return j;
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "setting: " << gptre::to_string(setting) << "\n";
  out << "micro P " << micro_precision << "  R " << micro_recall << "  F1 " << micro_f1 << "  (tp " << tp << ", fp "
      << fp << ", fn " << fn << ")\n";
  if (precision_degenerate || recall_degenerate) out << "note: degenerate 0/0 reported as 0\n";
  out << "null overprediction: ";
  if (null_overprediction_rate) {
    out << *null_overprediction_rate << "\n";
  } else {
    out << "n/a\n";
  }
  out << "parse fallbacks: " << parse_fallback_count << "\n\n";
  std::size_t width = 5;
  for (const auto& [label, s] : per_label) width = std::max(width, label.size());
  out << std::left << std::setw(static_cast<int>(width)) << "label" << std::right << std::setw(9) << "P"
      << std::setw(9) << "R" << std::setw(9) << "F1" << std::setw(9) << "support" << "\n";
  for (const auto& [label, s] : per_label) {
    out << std::left << std::setw(static_cast<int>(width)) << label << std::right << std::setw(9) << s.precision
        << std::setw(9) << s.recall << std::setw(9) << s.f1 << std::setw(9) << s.support << "\n";
  }
  return out.str();
}

DatasetSplit filter_null_setting(const DatasetSplit& split) {
  std::vector<REInstance> kept;
  for (const auto& inst : split.instances()) {
    if (!inst.gold_label.is_null) kept.push_back(inst);
  }
  if (kept.empty()) throw DataError("every instance is NULL; nothing left in the without_null setting");
  return DatasetSplit(split.name(), split.schema(), std::move(kept));
}

PredictionSet read_predictions(const std::filesystem::path& path, const RelationSchema& schema) {
  PredictionSet set;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(lines[i]);
      auto label_of = [&](const char* field) {
        auto parsed = schema.from_verbalized(j.at(field).get<std::string>());
        if (!parsed) throw DataError(std::string(field) + " label '" + j.at(field).get<std::string>() + "' is outside the schema");
        return *parsed;
      };
      set.pairs.push_back({j.at("test_id").get<std::string>(), label_of("gold"), label_of("pred"),
                           parse_status_from_string(j.value("parse_status", std::string("exact")))});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  set.validate(schema);
  return set;
}

}  // namespace gptre
