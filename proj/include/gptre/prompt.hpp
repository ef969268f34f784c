#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gptre/corpus.hpp"
#include "gptre/llm.hpp"
#include "gptre/retrieve.hpp"
#include "gptre/tokens.hpp"

namespace gptre {

// Bumped whenever any rendered wording changes; participates in cache keys.
inline constexpr std::string_view kTemplateVersion = "gptre-prompt-v1";

// Prompt layout. Blocks are separated by a blank line:
//
//   <instructions>
//
//   Context: <sentence>
//   Given the context, the relation between '<subj>' and '<obj>' is <label>.
//   It is because: <reasoning>          (optional)
//
//   Context: <test sentence>
//   Given the context, the relation between '<subj>' and '<obj>' is
namespace layout {
inline constexpr std::string_view kBlockSeparator = "\n\n";
inline constexpr std::string_view kContextPrefix = "Context: ";
inline constexpr std::string_view kRelationPrefix = "Given the context, the relation between '";
inline constexpr std::string_view kReasoningPrefix = "It is because: ";
inline constexpr std::string_view kAnswerCue = " is";
}  // namespace layout

std::string render_instructions(const RelationSchema& schema);
std::string render_demonstration(const Demonstration& demo);
std::string render_test_block(const REInstance& instance);

// What are the clues that lead to the relation between "<subj>" and "<obj>"
// to be "<label>" in the sentence "<sentence>"?
// It is because:
std::string reasoning_query(const REInstance& instance, const RelationLabel& label);

// Collapses whitespace and strips layout delimiters from generated text.
// Returns nullopt when nothing is left.
std::optional<std::string> sanitize_reasoning(std::string_view text);

struct ReasoningStats {
  std::size_t cache_hits = 0;
  std::size_t generated = 0;
  std::vector<std::string> warnings;
};

std::string reasoning_cache_key(const Demonstration& demo, std::string_view provider_name);

// Attaches reasoning to every demonstration, consulting the reasoning cache
// first. Only the reasoning field changes. Empty completions leave the
// demonstration unenriched and add a warning.
DemonstrationSet induce_reasoning(const DemonstrationSet& demos, Completer& llm, CompletionCache& cache,
                                  ReasoningStats* stats = nullptr);

enum class DemoOrder { ascending_similarity, descending_similarity };

std::string_view to_string(DemoOrder o);
DemoOrder demo_order_from_string(std::string_view s);

struct PromptParts {
  std::string instructions;
  DemonstrationSet demonstrations;  // most relevant first
  std::string test_text;            // rendered test block
  std::size_t budget_tokens = 4097;
};

struct AssembledPrompt {
  std::string text;
  std::size_t demonstrations_used = 0;
  std::vector<std::string> demo_ids;  // kept demonstrations, most relevant first
};

// Joins instructions, demonstrations and the test block. Demonstrations that
// do not fit are dropped from the least relevant end; throws UsageError if the
// instructions and test block alone exceed the budget.
AssembledPrompt assemble_prompt(const PromptParts& parts, const TokenEstimator& estimator,
                                DemoOrder order = DemoOrder::ascending_similarity);

}  // namespace gptre
