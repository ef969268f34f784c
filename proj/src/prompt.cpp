#include "gptre/prompt.hpp"

#include <algorithm>

#include "gptre/errors.hpp"
#include "gptre/util.hpp"

namespace gptre {

namespace {

constexpr std::string_view kDelimiters[] = {
    "Context:",
    "Given the context, the relation between",
    "It is because:",
};

bool has_delimiter(std::string_view text) {
  if (text.find('\n') != std::string_view::npos) return true;
  return std::any_of(std::begin(kDelimiters), std::end(kDelimiters),
                     [&](std::string_view d) { return text.find(d) != std::string_view::npos; });
}

std::string relation_line(const REInstance& inst) {
  return std::string(layout::kRelationPrefix) + inst.subject.text + "' and '" + inst.object.text + "'" +
         std::string(layout::kAnswerCue);
}

}  // namespace

std::string render_instructions(const RelationSchema& schema) {
  std::vector<std::string> names;
  for (const auto& c : schema.classes()) names.push_back(schema.verbalize(c));
  std::string out =
      "Relation extraction: given a context and a pair of entities in it, the first being the subject and the "
      "second the object, identify the relation between them.\n"
      "The pre-defined relation types are: " +
      join(names, ", ") + ".\n";
  if (schema.directional()) {
    out +=
        "A relation type ending in (e1,e2) holds from the first entity to the second; one ending in (e2,e1) "
        "holds from the second entity to the first.\n";
  }
  out += "Answer with the relation, which belongs to the pre-defined relation types. Otherwise, if none of them "
         "holds between the two entities, answer " +
         schema.null_name() + ".";
  return out;
}

std::string render_demonstration(const Demonstration& demo) {
  std::string out = std::string(layout::kContextPrefix) + demo.instance.sentence() + "\n" +
                    relation_line(demo.instance) + " " + verbalize(demo.label) + ".";
  if (demo.reasoning) {
    if (demo.reasoning->empty() || has_delimiter(*demo.reasoning)) {
      throw DataError("demonstration '" + demo.instance.id + "' carries unsanitized reasoning");
    }
    out += "\n" + std::string(layout::kReasoningPrefix) + *demo.reasoning;
  }
  return out;
}

std::string render_test_block(const REInstance& instance) {
  return std::string(layout::kContextPrefix) + instance.sentence() + "\n" + relation_line(instance);
}

std::string reasoning_query(const REInstance& instance, const RelationLabel& label) {
  return "What are the clues that lead to the relation between \"" + instance.subject.text + "\" and \"" +
         instance.object.text + "\" to be \"" + verbalize(label) + "\" in the sentence \"" + instance.sentence() +
         "\"?\nIt is because:";
}

std::optional<std::string> sanitize_reasoning(std::string_view text) {
  std::string s = join(split_whitespace(text), " ");
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto d : kDelimiters) {
      for (auto pos = s.find(d); pos != std::string::npos; pos = s.find(d)) {
        s.erase(pos, d.size());
        changed = true;
      }
    }
  }
  s = join(split_whitespace(s), " ");
  if (s.empty()) return std::nullopt;
  return s;
}

std::string reasoning_cache_key(const Demonstration& demo, std::string_view provider_name) {
  std::string material = "template=" + std::string(kTemplateVersion) + "\nid=" + demo.instance.id +
                         "\nlabel=" + verbalize(demo.label) + "\nprovider=" + std::string(provider_name);
  return sha256_hex(material);
}

DemonstrationSet induce_reasoning(const DemonstrationSet& demos, Completer& llm, CompletionCache& cache,
                                  ReasoningStats* stats) {
  DemonstrationSet out = demos;
  const std::string provider_name = llm.provider().name();
  std::vector<int> outcome(out.size(), 0);  // 1 = cache hit, 2 = generated, 3 = empty
  std::vector<std::string> queries(out.size());

  parallel_for_bounded(out.size(), 8, [&](std::size_t i) {
    auto& demo = out.items[i];
    const std::string key = reasoning_cache_key(demo, provider_name);
    if (auto hit = cache.get(key)) {
      demo.reasoning = sanitize_reasoning(hit->completion);
      outcome[i] = demo.reasoning ? 1 : 3;
      return;
    }
    queries[i] = reasoning_query(demo.instance, demo.label);
    std::string completion;
    try {
      completion = trim(llm.complete(queries[i]));
    } catch (const EmptyCompletionError&) {
      outcome[i] = 3;
      return;
    }
    demo.reasoning = sanitize_reasoning(completion);
    if (!demo.reasoning) {
      outcome[i] = 3;
      return;
    }
    cache.put(CacheEntry{key, queries[i], completion, provider_name, utc_timestamp()});
    outcome[i] = 2;
  });

  if (stats) {
    for (std::size_t i = 0; i < outcome.size(); ++i) {
      if (outcome[i] == 1) ++stats->cache_hits;
      if (outcome[i] == 2) ++stats->generated;
      if (outcome[i] == 3) {
        stats->warnings.push_back("empty reasoning for demonstration '" + out.items[i].instance.id +
                                  "'; left unenriched");
      }
    }
  }
  return out;
}

std::string_view to_string(DemoOrder o) {
  return o == DemoOrder::ascending_similarity ? "ascending_similarity" : "descending_similarity";
}

DemoOrder demo_order_from_string(std::string_view s) {
  if (s == "ascending_similarity" || s == "ascending") return DemoOrder::ascending_similarity;
  if (s == "descending_similarity" || s == "descending") return DemoOrder::descending_similarity;
  throw UsageError("unknown demonstration order '" + std::string(s) + "'");
}

namespace {

std::string render_with(const PromptParts& parts, const std::vector<std::string>& rendered, std::size_t count,
                        DemoOrder order) {
  std::string out = parts.instructions;
  const std::string sep(layout::kBlockSeparator);
  auto emit = [&](std::size_t i) { out += sep + rendered[i]; };
  if (order == DemoOrder::ascending_similarity) {
    for (std::size_t i = count; i-- > 0;) emit(i);
  } else {
    for (std::size_t i = 0; i < count; ++i) emit(i);
  }
  out += sep + parts.test_text;
  return out;
}

}  // namespace

AssembledPrompt assemble_prompt(const PromptParts& parts, const TokenEstimator& estimator, DemoOrder order) {
  const auto& demos = parts.demonstrations;
  std::vector<std::size_t> rank(demos.size());
  for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
  // Fully scored sets are ranked by score; otherwise the given order is the rank.
  const bool scored = std::all_of(demos.scores.begin(), demos.scores.end(), [](const auto& s) { return s.has_value(); });
  if (scored) {
    std::stable_sort(rank.begin(), rank.end(),
                     [&](std::size_t a, std::size_t b) { return *demos.scores[a] > *demos.scores[b]; });
  }
  std::vector<std::string> rendered;
  rendered.reserve(demos.size());
  for (std::size_t i : rank) rendered.push_back(render_demonstration(demos.items[i]));

  for (std::size_t count = rendered.size() + 1; count-- > 0;) {
    std::string text = render_with(parts, rendered, count, order);
    if (estimator.estimate(text) <= parts.budget_tokens) {
      AssembledPrompt out{std::move(text), count, {}};
      for (std::size_t i = 0; i < count; ++i) out.demo_ids.push_back(demos.items[rank[i]].instance.id);
      return out;
    }
  }
  throw UsageError("instructions and test block alone exceed the budget of " +
                   std::to_string(parts.budget_tokens) + " tokens (" + estimator.name() + ")");
}

}  // namespace gptre
