#include <cctype>
#include <string>
#include <vector>

#include "gptre/corpus.hpp"
#include "gptre/errors.hpp"
#include "gptre/util.hpp"

namespace gptre {

namespace {

EntityMention span_mention(const std::vector<std::string>& tokens, std::size_t start, std::size_t end,
                           std::optional<std::string> type, Role role) {
  EntityMention m;
  m.start = start;
  m.end = end;
  m.role = role;
  m.entity_type = std::move(type);
  if (start < end && end <= tokens.size()) {
    m.text = join(std::span<const std::string>(tokens).subspan(start, end - start), " ");
  }
  return m;
}

}  // namespace

DatasetSplit load_tacred(const std::filesystem::path& path, const RelationSchema& schema, SplitName name,
                         std::string_view no_relation) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw DataError(path.string() + ": expected a JSON array of TACRED records");

  std::vector<REInstance> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& r = doc[i];
    try {
      REInstance inst;
      inst.id = r.at("id").get<std::string>();
      inst.tokens = r.at("token").get<std::vector<std::string>>();
      // TACRED tokens occasionally contain spaces (e.g. phone numbers).
      for (auto& t : inst.tokens) {
        for (char& c : t) {
          if (std::isspace(static_cast<unsigned char>(c))) c = '_';
        }
      }
      inst.subject = span_mention(inst.tokens, r.at("subj_start").get<std::size_t>(),
                                  r.at("subj_end").get<std::size_t>() + 1,
                                  r.value("subj_type", std::string()), Role::subject);
      inst.object = span_mention(inst.tokens, r.at("obj_start").get<std::size_t>(),
                                 r.at("obj_end").get<std::size_t>() + 1, r.value("obj_type", std::string()),
                                 Role::object);
      if (inst.subject.entity_type && inst.subject.entity_type->empty()) inst.subject.entity_type.reset();
      if (inst.object.entity_type && inst.object.entity_type->empty()) inst.object.entity_type.reset();
      const auto relation = r.at("relation").get<std::string>();
      inst.gold_label = relation == no_relation ? schema.null_label() : schema.make_label(relation, std::nullopt);
      validate_instance(inst, schema);
      out.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": record " + std::to_string(i) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ": record " + std::to_string(i) + ": " + e.what());
    }
  }
  return DatasetSplit(name, schema, std::move(out));
}

namespace {

bool is_edge_punct(char c) {
  static constexpr std::string_view kPunct = ".,;:!?\"()'";
  return kPunct.find(c) != std::string_view::npos;
}

// Whitespace split with leading/trailing punctuation peeled into tokens.
std::vector<std::string> tokenize_semeval(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& chunk : split_whitespace(text)) {
    if (chunk == "<e1>" || chunk == "</e1>" || chunk == "<e2>" || chunk == "</e2>") {
      out.push_back(chunk);
      continue;
    }
    std::size_t b = 0;
    std::size_t e = chunk.size();
    std::vector<std::string> tail;
    while (b < e && is_edge_punct(chunk[b])) out.emplace_back(1, chunk[b++]);
    while (e > b && is_edge_punct(chunk[e - 1])) tail.emplace_back(1, chunk[--e]);
    if (e > b) out.push_back(chunk.substr(b, e - b));
    out.insert(out.end(), tail.rbegin(), tail.rend());
  }
  return out;
}

REInstance parse_semeval_record(const std::string& id, std::string sentence, const std::string& label_line,
                                const RelationSchema& schema) {
  for (const char* tag : {"<e1>", "</e1>", "<e2>", "</e2>"}) {
    std::string t(tag);
    for (std::size_t pos = sentence.find(t); pos != std::string::npos; pos = sentence.find(t, pos + t.size() + 2)) {
      sentence.replace(pos, t.size(), " " + t + " ");
    }
  }
  REInstance inst;
  inst.id = id;
  std::size_t e1s = 0, e1e = 0, e2s = 0, e2e = 0;
  int seen = 0;
  for (const auto& tok : tokenize_semeval(sentence)) {
    if (tok == "<e1>") { e1s = inst.tokens.size(); ++seen; }
    else if (tok == "</e1>") { e1e = inst.tokens.size(); ++seen; }
    else if (tok == "<e2>") { e2s = inst.tokens.size(); ++seen; }
    else if (tok == "</e2>") { e2e = inst.tokens.size(); ++seen; }
    else inst.tokens.push_back(tok);
  }
  if (seen != 4) throw DataError("record " + id + " lacks <e1>/<e2> markup");
  inst.subject = span_mention(inst.tokens, e1s, e1e, std::nullopt, Role::subject);
  inst.object = span_mention(inst.tokens, e2s, e2e, std::nullopt, Role::object);

  const std::string label = trim(label_line);
  if (auto parsed = schema.from_verbalized(label)) {
    inst.gold_label = *parsed;
  } else {
    throw DataError("record " + id + " has unknown label '" + label + "'");
  }
  validate_instance(inst, schema);
  return inst;
}

}  // namespace

DatasetSplit load_semeval(const std::filesystem::path& path, const RelationSchema& schema, SplitName name) {
  const auto lines = read_lines(path);
  std::vector<REInstance> out;
  std::size_t i = 0;
  while (i < lines.size()) {
    const std::string head = trim(lines[i]);
    if (head.empty()) {
      ++i;
      continue;
    }
    const auto tab = head.find('\t');
    if (tab == std::string::npos || i + 1 >= lines.size()) {
      throw DataError(path.string() + ":" + std::to_string(i + 1) + ": expected '<id>\\t\"<sentence>\"'");
    }
    std::string sentence = trim(head.substr(tab + 1));
    if (sentence.size() >= 2 && sentence.front() == '"' && sentence.back() == '"') {
      sentence = sentence.substr(1, sentence.size() - 2);
    }
    try {
      out.push_back(parse_semeval_record(head.substr(0, tab), sentence, lines[i + 1], schema));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
    i += 2;
    if (i < lines.size() && lines[i].rfind("Comment", 0) == 0) ++i;
  }
  return DatasetSplit(name, schema, std::move(out));
}

}  // namespace gptre
