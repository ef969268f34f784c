#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "gptre/embed.hpp"
#include "gptre/errors.hpp"
#include "support/fixtures.hpp"

using namespace gptre;
using fixtures::TempDir;

namespace {

// Records every text it was asked to embed.
class RecordingProvider : public EmbeddingProvider {
 public:
  explicit RecordingProvider(std::size_t dim = 8) : inner_(dim, 1) {}
  std::string name() const override { return "recording"; }
  std::size_t dim() const override { return inner_.dim(); }
  std::vector<std::vector<float>> embed(std::span<const std::string> texts) override {
    {
      std::lock_guard lock(mu_);
      seen.insert(seen.end(), texts.begin(), texts.end());
      ++calls;
    }
    if (fail_after >= 0 && calls > fail_after) throw ProviderError("boom");
    return inner_.embed(texts);
  }
  std::vector<std::string> seen;
  int calls = 0;
  int fail_after = -1;

 private:
  HashProjectionProvider inner_;
  std::mutex mu_;
};

struct TestServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  TestServer() = default;
  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~TestServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port) + path; }
};

}  // namespace

TEST_CASE("store invariants") {
  EmbeddingStore store(Regime::sent, 3);
  store.append({"a", Regime::sent, {1, 0, 0}});
  CHECK_THROWS_AS(store.append({"a", Regime::sent, {0, 1, 0}}), DataError);
  CHECK_THROWS_AS(store.append({"b", Regime::entprompt, {0, 1, 0}}), DataError);
  CHECK_THROWS_AS(store.append({"b", Regime::sent, {0, 1}}), DataError);
  CHECK_THROWS_AS(store.append({"b", Regime::sent, {0, 0, 0}}), DataError);
  CHECK(store.size() == 1);
  CHECK(store.contains("a"));
  CHECK_FALSE(store.contains("b"));
}

TEST_CASE("cosine of a vector with itself is one") {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    std::vector<float> v(16);
    for (auto& x : v) x = static_cast<float>(rng.unit() - 0.5) * 100.0f;
    CHECK(cosine_similarity(v, v) == doctest::Approx(1.0).epsilon(1e-6));
  }
  std::vector<float> a{1, 0}, b{0, 1}, c{-1, 0};
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
  CHECK(cosine_similarity(a, c) == doctest::Approx(-1.0));
}

TEST_CASE("vector file round trip is exact and byte stable") {
  TempDir dir;
  Rng rng(4);
  EmbeddingStore store(Regime::ft, 5, {{"encoder", "test"}});
  for (int i = 0; i < 20; ++i) {
    std::vector<float> v(5);
    for (auto& x : v) x = static_cast<float>((rng.unit() - 0.5) * std::pow(10.0, static_cast<double>(rng.below(12)) - 6));
    store.append({"id" + std::to_string(i), Regime::ft, v});
  }
  write_vector_file(store, dir / "v.jsonl");
  const auto back = read_vector_file(dir / "v.jsonl");
  CHECK(back.regime() == Regime::ft);
  CHECK(back.dim() == 5);
  CHECK(back.meta().at("encoder") == "test");
  REQUIRE(back.size() == store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(back.records()[i].instance_id == store.records()[i].instance_id);
    CHECK(back.records()[i].values == store.records()[i].values);
  }
  write_vector_file(back, dir / "w.jsonl");
  CHECK(read_file(dir / "v.jsonl") == read_file(dir / "w.jsonl"));

  const auto first_line = read_lines(dir / "v.jsonl").front();
  CHECK(first_line == R"({"format":"rev1","dim":5,"regime":"ft","meta":{"encoder":"test"}})");
}

TEST_CASE("vector file errors") {
  TempDir dir;
  auto put = [&](const std::string& body) {
    write_file_atomic(dir / "v.jsonl", body);
    return dir / "v.jsonl";
  };
  CHECK_THROWS_AS(read_vector_file(put("")), DataError);
  CHECK(read_vector_file(put("{\"format\":\"rev1\",\"dim\":2,\"regime\":\"sent\"}\n")).empty());
  CHECK_THROWS_AS(read_vector_file(put("{\"format\":\"rev0\",\"dim\":2,\"regime\":\"sent\"}\n")), DataError);
  CHECK_THROWS_AS(read_vector_file(put("{\"format\":\"rev1\",\"dim\":2,\"regime\":\"sent\"}\n"
                                       "{\"id\":\"a\",\"regime\":\"sent\",\"dim\":3,\"values\":[1,2,3]}\n")),
                  DataError);
  CHECK_THROWS_AS(read_vector_file(put("{\"format\":\"rev1\",\"dim\":2,\"regime\":\"sent\"}\n"
                                       "{\"id\":\"a\",\"regime\":\"sent\",\"dim\":2,\"values\":[0,0]}\n")),
                  DataError);
  CHECK_THROWS_AS(read_vector_file(dir / "missing.jsonl"), DataError);
}

TEST_CASE("entity prompt text") {
  RelationSchema s({"per:siblings"});
  const auto inst = fixtures::he_lisa(s.make_label("per:siblings", std::nullopt), false, false);
  CHECK(entity_prompt_text(inst) == "The relation between 'He' and 'Lisa' in the context: He has a sister Lisa");

  auto quoted = fixtures::make_instance("q", {"O'Brien", "met", "Lisa"}, 0, 1, 2, 3, s.null_label());
  CHECK(entity_prompt_text(quoted) == "The relation between 'O'Brien' and 'Lisa' in the context: O'Brien met Lisa");
}

TEST_CASE("entity markers") {
  RelationSchema s({"per:siblings"});
  const auto typed = fixtures::he_lisa(s.make_label("per:siblings", std::nullopt));
  const auto m = mark_entities(typed);
  CHECK(m.str() == "[CLS] [SUB_PER] He [/SUB_PER] has a sister [OBJ_PER] Lisa [/OBJ_PER] . [SEP]");
  CHECK(m.tokens[m.subject_begin] == "[SUB_PER]");
  CHECK(m.tokens[m.object_begin] == "[OBJ_PER]");

  const auto untyped = fixtures::he_lisa(s.null_label(), true, false);
  CHECK(mark_entities(untyped).str() == "[CLS] [SUB] He [/SUB] has a sister [OBJ] Lisa [/OBJ] . [SEP]");

  // Object before subject, multi-token spans.
  auto rev = fixtures::make_instance("r", {"New", "York", "is", "home", "to", "Ann", "Lee"}, 5, 7, 0, 2,
                                     s.null_label(), "PER", "LOC");
  const auto mr = mark_entities(rev);
  CHECK(mr.str() == "[CLS] [OBJ_LOC] New York [/OBJ_LOC] is home to [SUB_PER] Ann Lee [/SUB_PER] [SEP]");
  CHECK(mr.tokens[mr.subject_begin] == "[SUB_PER]");
  CHECK(mr.tokens[mr.object_begin] == "[OBJ_LOC]");
}

TEST_CASE("de-marking restores the tokens") {
  RelationSchema s({"r"});
  Rng rng(21);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = 3 + rng.below(10);
    std::vector<std::string> toks;
    for (std::size_t t = 0; t < n; ++t) toks.push_back("t" + std::to_string(rng.below(50)));
    std::size_t a = rng.below(n), b = rng.below(n);
    while (b == a) b = rng.below(n);
    auto inst = fixtures::make_instance("x", toks, a, a + 1, b, b + 1, s.null_label(),
                                        rng.below(2) ? std::optional<std::string>("T") : std::nullopt);
    std::vector<std::string> back;
    for (const auto& t : mark_entities(inst).tokens) {
      if (t.size() > 2 && t.front() == '[' && t.back() == ']') continue;
      back.push_back(t);
    }
    CHECK(back == toks);
  }
}

TEST_CASE("hash projection provider") {
  HashProjectionProvider p(32, 5);
  std::vector<std::string> texts{"He has a sister Lisa", "he HAS a sister lisa", "stock prices fell sharply"};
  const auto v = p.embed(texts);
  REQUIRE(v.size() == 3);
  CHECK(v[0] == v[1]);
  CHECK(v[0] == p.embed(texts)[0]);
  CHECK(v[0].size() == 32);
  HashProjectionProvider other(32, 6);
  CHECK(other.embed(texts)[0] != v[0]);
  CHECK(cosine_similarity(v[0], v[2]) < 0.9);
}

TEST_CASE("embed_split writes, resumes and is idempotent") {
  TempDir dir;
  RelationSchema s({"rel0", "rel1"});
  const auto split = fixtures::synthetic_split(s, {5, 5}, 3, "e", 2);
  RecordingProvider provider;
  EmbedOptions opts;
  opts.batch_size = 4;
  opts.max_in_flight = 2;

  const auto store = embed_split(split, provider, Regime::sent, dir / "v.jsonl", opts);
  CHECK(store.size() == split.size());
  CHECK(provider.seen.size() == split.size());
  for (const auto& inst : split.instances()) CHECK(store.contains(inst.id));
  const auto bytes = read_file(dir / "v.jsonl");

  provider.seen.clear();
  const auto again = embed_split(split, provider, Regime::sent, dir / "v.jsonl", opts);
  CHECK(provider.seen.empty());
  CHECK(again.size() == split.size());
  CHECK(read_file(dir / "v.jsonl") == bytes);

  // Same inputs from scratch give identical bytes.
  RecordingProvider fresh;
  embed_split(split, fresh, Regime::sent, dir / "w.jsonl", opts);
  CHECK(read_file(dir / "w.jsonl") == bytes);

  CHECK_THROWS_AS(embed_split(split, provider, Regime::entprompt, dir / "v.jsonl", opts), DataError);
  RecordingProvider wide(16);
  CHECK_THROWS_AS(embed_split(split, wide, Regime::sent, dir / "v.jsonl", opts), DataError);
  CHECK_THROWS_AS(embed_split(split, provider, Regime::ft, dir / "x.jsonl", opts), UsageError);
}

TEST_CASE("embed_split keeps the completed prefix when the provider fails") {
  TempDir dir;
  RelationSchema s({"rel0"});
  const auto split = fixtures::synthetic_split(s, {10}, 0, "p", 3);
  RecordingProvider flaky;
  flaky.fail_after = 1;
  EmbedOptions opts;
  opts.batch_size = 4;
  opts.max_in_flight = 1;
  CHECK_THROWS_AS(embed_split(split, flaky, Regime::sent, dir / "v.jsonl", opts), ProviderError);
  CHECK(read_vector_file(dir / "v.jsonl").size() == 4);

  RecordingProvider ok;
  const auto store = embed_split(split, ok, Regime::sent, dir / "v.jsonl", opts);
  CHECK(store.size() == 10);
  CHECK(ok.seen.size() == 6);
}

TEST_CASE("entprompt regime sends the template string") {
  TempDir dir;
  RelationSchema s({"per:siblings"});
  DatasetSplit split(SplitName::train, s, {fixtures::he_lisa(s.null_label(), false, false)});
  RecordingProvider provider;
  embed_split(split, provider, Regime::entprompt, dir / "v.jsonl");
  REQUIRE(provider.seen.size() == 1);
  CHECK(provider.seen[0] == "The relation between 'He' and 'Lisa' in the context: He has a sister Lisa");
}

TEST_CASE("import ft vectors") {
  TempDir dir;
  RelationSchema s({"rel0"});
  const auto split = fixtures::synthetic_split(s, {2}, 0, "f", 1);
  EmbeddingStore ft(Regime::ft, 2);
  ft.append({"f00000", Regime::ft, {1, 0}});
  ft.append({"f00001", Regime::ft, {0, 1}});
  write_vector_file(ft, dir / "ft.jsonl");
  CHECK(import_ft_vectors(dir / "ft.jsonl", split).size() == 2);

  ft.append({"ghost", Regime::ft, {1, 1}});
  write_vector_file(ft, dir / "ft.jsonl");
  try {
    import_ft_vectors(dir / "ft.jsonl", split);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }

  EmbeddingStore sent(Regime::sent, 2);
  sent.append({"f00000", Regime::sent, {1, 0}});
  write_vector_file(sent, dir / "sent.jsonl");
  CHECK_THROWS_AS(import_ft_vectors(dir / "sent.jsonl", split), DataError);
}

TEST_CASE("http embedding provider") {
  TestServer srv;
  std::atomic<int> hits{0};
  std::string auth;
  srv.server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    auth = req.get_header_value("Authorization");
    const auto body = nlohmann::json::parse(req.body);
    nlohmann::json vectors = nlohmann::json::array();
    for (const auto& t : body.at("texts")) vectors.push_back({static_cast<double>(t.get<std::string>().size()), 1.0});
    res.set_content(nlohmann::json{{"vectors", vectors}}.dump(), "application/json");
  });
  srv.server.Post("/flaky", [&](const httplib::Request&, httplib::Response& res) {
    if (++hits % 2 == 1) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"vectors":[[1,2]]})", "application/json");
  });
  srv.server.Post("/denied", [&](const httplib::Request&, httplib::Response& res) { res.status = 401; });
  srv.start();

  HttpEmbeddingProvider p({srv.url("/embed"), "secret", std::chrono::seconds(5)}, 2, "m");
  std::vector<std::string> texts{"abc", "hello"};
  const auto v = p.embed(texts);
  REQUIRE(v.size() == 2);
  CHECK(v[0][0] == 3.0f);
  CHECK(v[1][0] == 5.0f);
  CHECK(auth == "Bearer secret");

  hits = 0;
  TempDir dir;
  RelationSchema s({"rel0"});
  const auto split = fixtures::synthetic_split(s, {1}, 0, "h", 1);
  HttpEmbeddingProvider flaky({srv.url("/flaky"), std::nullopt, std::chrono::seconds(5)}, 2, "m");
  EmbedOptions opts;
  std::vector<std::chrono::milliseconds> sleeps;
  opts.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d); };
  CHECK(embed_split(split, flaky, Regime::sent, dir / "v.jsonl", opts).size() == 1);
  CHECK(hits == 2);
  REQUIRE(sleeps.size() == 1);
  CHECK(sleeps[0] == std::chrono::milliseconds(200));

  HttpEmbeddingProvider denied({srv.url("/denied"), std::nullopt, std::chrono::seconds(5)}, 2, "m");
  CHECK_THROWS_AS(denied.embed(texts), ProviderError);
  try {
    denied.embed(texts);
  } catch (const TransientProviderError&) {
    FAIL("401 must not be retried");
  } catch (const ProviderError&) {
  }

  HttpEmbeddingProvider down({"http://127.0.0.1:1/embed", std::nullopt, std::chrono::seconds(1)}, 2, "m");
  CHECK_THROWS_AS(down.embed(texts), TransientProviderError);
}
