#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>

#include "gptre/errors.hpp"
#include "gptre/prompt.hpp"
#include "support/fixtures.hpp"

using namespace gptre;
using fixtures::TempDir;

namespace {

class ScriptedProvider : public LlmProvider {
 public:
  explicit ScriptedProvider(std::string reply) : reply_(std::move(reply)) {}
  std::string name() const override { return "scripted"; }
  std::string complete(const LlmConfig&, const std::string& prompt) override {
    ++calls;
    last_prompt = prompt;
    return reply_;
  }
  std::atomic<int> calls{0};
  std::string last_prompt;

 private:
  std::string reply_;
};

Demonstration demo_of(const REInstance& inst) { return Demonstration{inst, inst.gold_label, std::nullopt}; }

}  // namespace

TEST_CASE("demonstration and test block layout") {
  RelationSchema s({"per:siblings"});
  const auto inst = fixtures::he_lisa(s.make_label("per:siblings", std::nullopt), false, false);
  CHECK(render_demonstration(demo_of(inst)) ==
        "Context: He has a sister Lisa\n"
        "Given the context, the relation between 'He' and 'Lisa' is per:siblings.");
  auto with_reason = demo_of(inst);
  with_reason.reasoning = "both arguments name a producer and its product";
  CHECK(render_demonstration(with_reason) ==
        "Context: He has a sister Lisa\n"
        "Given the context, the relation between 'He' and 'Lisa' is per:siblings.\n"
        "It is because: both arguments name a producer and its product");
  CHECK(render_test_block(inst) ==
        "Context: He has a sister Lisa\n"
        "Given the context, the relation between 'He' and 'Lisa' is");

  const auto null_inst = fixtures::he_lisa(s.null_label(), false, false);
  CHECK(render_demonstration(demo_of(null_inst)).ends_with(" is NULL."));

  auto dirty = demo_of(inst);
  dirty.reasoning = "line one\nContext: injected";
  CHECK_THROWS_AS(render_demonstration(dirty), DataError);
}

TEST_CASE("instructions") {
  RelationSchema flat({"per:siblings", "org:founded_by"});
  const auto a = render_instructions(flat);
  CHECK(a.find("per:siblings, org:founded_by") != std::string::npos);
  CHECK(a.ends_with("answer NULL."));
  CHECK(a.find("(e1,e2)") == std::string::npos);
  RelationSchema dir({"Cause-Effect"}, "Other", true);
  const auto b = render_instructions(dir);
  CHECK(b.find("Cause-Effect(e1,e2), Cause-Effect(e2,e1)") != std::string::npos);
  CHECK(b.ends_with("answer Other."));
}

TEST_CASE("reasoning query") {
  RelationSchema s({"per:siblings"});
  const auto inst = fixtures::he_lisa(s.make_label("per:siblings", std::nullopt), false, false);
  CHECK(reasoning_query(inst, inst.gold_label) ==
        "What are the clues that lead to the relation between \"He\" and \"Lisa\" to be \"per:siblings\" in the "
        "sentence \"He has a sister Lisa\"?\nIt is because:");
  CHECK(reasoning_query(inst, s.null_label()).find("to be \"NULL\"") != std::string::npos);

  auto same = fixtures::make_instance("s", {"Lisa", "and", "Lisa"}, 0, 1, 2, 3, s.null_label());
  CHECK(reasoning_query(same, same.gold_label).starts_with(
      "What are the clues that lead to the relation between \"Lisa\" and \"Lisa\""));
}

TEST_CASE("sanitize reasoning") {
  CHECK(sanitize_reasoning("  the  sister\nrelation ") == "the sister relation");
  CHECK(sanitize_reasoning("It is because: It is because: sisters") == "sisters");
  CHECK(sanitize_reasoning("Context: x Given the context, the relation between y") == "x y");
  CHECK_FALSE(sanitize_reasoning(" \n\t"));
  CHECK_FALSE(sanitize_reasoning("It is because:"));
  // Removal can expose a new delimiter; it is stripped too.
  CHECK(sanitize_reasoning("ConIt is because:text: kept") == "kept");
}

TEST_CASE("reasoning cache key") {
  RelationSchema s({"per:siblings"});
  const auto inst = fixtures::he_lisa(s.make_label("per:siblings", std::nullopt));
  const auto d = demo_of(inst);
  auto other = d;
  other.label = s.null_label();
  CHECK(reasoning_cache_key(d, "p") == reasoning_cache_key(d, "p"));
  CHECK(reasoning_cache_key(d, "p") != reasoning_cache_key(d, "q"));
  CHECK(reasoning_cache_key(d, "p") != reasoning_cache_key(other, "p"));
  CHECK(reasoning_cache_key(d, "p").size() == 64);
}

TEST_CASE("induce reasoning uses the cache") {
  TempDir dir;
  RelationSchema s({"rel0", "rel1"});
  const auto train = fixtures::synthetic_split(s, {2, 2}, 1, "r", 1);
  DemonstrationSet demos;
  for (const auto& inst : train.instances()) demos.push_back(demo_of(inst), std::nullopt);

  ScriptedProvider provider("  It is because: the words agree.\n");
  CharQuarterEstimator est;
  Completer completer(provider, LlmConfig{}, est);
  CompletionCache cache(dir / "reasoning");
  ReasoningStats stats;
  const auto out = induce_reasoning(demos, completer, cache, &stats);
  CHECK(provider.calls == 5);
  CHECK(stats.generated == 5);
  REQUIRE(out.size() == 5);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out.items[i].reasoning == "the words agree.");
    CHECK(out.items[i].instance == demos.items[i].instance);
    CHECK(out.items[i].label == demos.items[i].label);
  }

  ReasoningStats again;
  const auto cached = induce_reasoning(demos, completer, cache, &again);
  CHECK(provider.calls == 5);
  CHECK(again.cache_hits == 5);
  CHECK(cached.items[0].reasoning == out.items[0].reasoning);
}

TEST_CASE("empty reasoning leaves the demonstration unenriched") {
  TempDir dir;
  RelationSchema s({"rel0"});
  const auto train = fixtures::synthetic_split(s, {2}, 0, "r", 1);
  DemonstrationSet demos;
  for (const auto& inst : train.instances()) demos.push_back(demo_of(inst), 0.5);
  CharQuarterEstimator est;
  CompletionCache cache(dir / "reasoning");

  ScriptedProvider blank("   ");
  Completer c1(blank, LlmConfig{}, est);
  ReasoningStats stats;
  const auto out = induce_reasoning(demos, c1, cache, &stats);
  CHECK_FALSE(out.items[0].reasoning);
  CHECK(stats.warnings.size() == 2);

  ScriptedProvider only_delims("It is because:");
  Completer c2(only_delims, LlmConfig{}, est);
  ReasoningStats stats2;
  const auto out2 = induce_reasoning(demos, c2, cache, &stats2);
  CHECK_FALSE(out2.items[1].reasoning);
  CHECK(stats2.warnings.size() == 2);
  CHECK(out2.scores == demos.scores);
}

TEST_CASE("prompt assembly orders and fits demonstrations") {
  RelationSchema s({"rel0", "rel1"});
  const auto train = fixtures::synthetic_split(s, {3, 3}, 0, "a", 2);
  DemonstrationSet demos;
  // Deliberately unsorted scores.
  const double scores[] = {0.2, 0.9, 0.5, 0.7, 0.1, 0.3};
  for (std::size_t i = 0; i < 6; ++i) demos.push_back(demo_of(train.instances()[i]), scores[i]);
  const auto test = fixtures::he_lisa(s.null_label(), false, false);
  CharCountEstimator chars;

  PromptParts parts{render_instructions(s), demos, render_test_block(test), 1000000};
  const auto all = assemble_prompt(parts, chars);
  CHECK(all.demonstrations_used == 6);
  CHECK(all.demo_ids == std::vector<std::string>{"a00001", "a00003", "a00002", "a00005", "a00000", "a00004"});
  // Ascending: the most similar demonstration sits right before the test block.
  const auto most = render_demonstration(demos.items[1]);
  CHECK(all.text.ends_with(most + "\n\n" + render_test_block(test)));
  CHECK(all.text.starts_with(render_instructions(s) + "\n\n" + render_demonstration(demos.items[4])));

  const auto desc = assemble_prompt(parts, chars, DemoOrder::descending_similarity);
  CHECK(desc.text.starts_with(render_instructions(s) + "\n\n" + most));

  // Budget that fits exactly the three most similar.
  std::string three = render_instructions(s);
  for (std::size_t i : {2u, 3u, 1u}) three += "\n\n" + render_demonstration(demos.items[i]);
  three += "\n\n" + render_test_block(test);
  parts.budget_tokens = three.size();
  const auto cut = assemble_prompt(parts, chars);
  CHECK(cut.demonstrations_used == 3);
  CHECK(cut.text == three);
  CHECK(cut.demo_ids == std::vector<std::string>{"a00001", "a00003", "a00002"});

  parts.budget_tokens = (render_instructions(s) + "\n\n" + render_test_block(test)).size();
  CHECK(assemble_prompt(parts, chars).demonstrations_used == 0);
  parts.budget_tokens -= 1;
  CHECK_THROWS_AS(assemble_prompt(parts, chars), UsageError);
}

TEST_CASE("unscored demonstrations keep their order") {
  RelationSchema s({"rel0"});
  const auto train = fixtures::synthetic_split(s, {4}, 0, "u", 2);
  DemonstrationSet demos;
  for (const auto& inst : train.instances()) demos.push_back(demo_of(inst), std::nullopt);
  const auto test = fixtures::he_lisa(s.null_label(), false, false);
  CharCountEstimator chars;
  PromptParts parts{"I", demos, render_test_block(test), 1000000};
  const auto p = assemble_prompt(parts, chars);
  CHECK(p.demo_ids == std::vector<std::string>{"u00000", "u00001", "u00002", "u00003"});
}

TEST_CASE("char quarter estimator") {
  CharQuarterEstimator e;
  CHECK(e.estimate("") == 0);
  CHECK(e.estimate("a") == 2);        // ceil(1/4)=1, *1.1 -> 1.1 -> 2
  CHECK(e.estimate("abcd") == 2);
  CHECK(e.estimate(std::string(40, 'x')) == 11);
  CHECK(e.estimate(std::string(400, 'x')) == 110);
  for (std::size_t n = 0; n < 500; ++n) CHECK(e.estimate(std::string(n + 1, 'x')) >= e.estimate(std::string(n, 'x')));
}
