#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "edet/corpus.hpp"
#include "support.hpp"

using namespace edet;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& contents) {
    path = (std::filesystem::temp_directory_path() /
            ("edet_test_" + std::to_string(std::uintptr_t(this)) + ".jsonl"))
               .string();
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

Corpus make_corpus(int per_type, int nulls) {
  Corpus c;
  c.ontology = test::mini_ontology();
  int n = 0;
  for (int i = 0; i < per_type; ++i) {
    c.sentences.push_back(test::make_sentence("a" + std::to_string(i), {"the", "spark", "flew"},
                                              {{"Alpha", 1, 1}}));
    c.sentences.push_back(test::make_sentence("b" + std::to_string(i), {"ships", "drift", "away"},
                                              {{"Beta", 1, 1}}));
    n += 2;
  }
  for (int i = 0; i < nulls; ++i)
    c.sentences.push_back(test::make_sentence("n" + std::to_string(i), {"quiet", "morning"}));
  return c;
}

std::string dump(const std::vector<AnnotatedSentence>& xs) {
  std::string s;
  for (const auto& x : xs) s += sentence_to_json(x).dump() + "\n";
  return s;
}

}  // namespace

TEST_CASE("load_corpus parses a single record") {
  const auto onto = test::mini_ontology();
  TempFile f(R"({"id":"s1","tokens":["He","sparked"],"mentions":[{"type":"Alpha","start":1,"end":1}]})"
             "\n");
  const Corpus c = load_corpus(f.path, onto);
  REQUIRE(c.sentences.size() == 1);
  CHECK(c.sentences[0].sentence.id == "s1");
  REQUIRE(c.sentences[0].mentions.size() == 1);
  CHECK(c.sentences[0].mentions[0].event_type == "Alpha");
}

TEST_CASE("load_corpus keeps NULL instances") {
  TempFile f(R"({"id":"s1","tokens":["nothing","here"],"mentions":[]})"
             "\n");
  const Corpus c = load_corpus(f.path, test::mini_ontology());
  REQUIRE(c.sentences.size() == 1);
  CHECK(c.sentences[0].is_null_instance());
}

TEST_CASE("load_corpus reports out-of-bounds spans with the record location") {
  TempFile f(R"({"id":"ok","tokens":["a","b"],"mentions":[]})"
             "\n"
             R"({"id":"bad","tokens":["a","b"],"mentions":[{"type":"Alpha","start":5,"end":5}]})"
             "\n");
  try {
    load_corpus(f.path, test::mini_ontology());
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":2") != std::string::npos);  // line number
    CHECK(msg.find("bad") != std::string::npos);
  }
}

TEST_CASE("load_corpus unknown type policy") {
  TempFile f(R"({"id":"s1","tokens":["x"],"mentions":[{"type":"Gamma","start":0,"end":0}]})"
             "\n");
  CHECK_THROWS_AS(load_corpus(f.path, test::mini_ontology(), UnknownTypePolicy::Fail),
                  ValidationError);
  const Corpus c = load_corpus(f.path, test::mini_ontology(), UnknownTypePolicy::Skip);
  REQUIRE(c.sentences.size() == 1);
  CHECK(c.sentences[0].mentions.empty());
}

TEST_CASE("load_corpus rejects parse errors and duplicate ids") {
  TempFile bad("not json\n");
  CHECK_THROWS_AS(load_corpus(bad.path, test::mini_ontology()), ValidationError);
  TempFile dup(R"({"id":"s1","tokens":["x"],"mentions":[]})"
               "\n"
               R"({"id":"s1","tokens":["y"],"mentions":[]})"
               "\n");
  CHECK_THROWS_AS(load_corpus(dup.path, test::mini_ontology()), ValidationError);
  CHECK_THROWS_AS(load_corpus("/nonexistent/path.jsonl", test::mini_ontology()), ValidationError);
}

TEST_CASE("save/load round trip on random corpora") {
  Rng rng(77);
  for (int trial = 0; trial < 3; ++trial) {
    Corpus c = make_corpus(2 + int(rng.next_below(3)), int(rng.next_below(3)));
    TempFile f(dump(c.sentences));
    const Corpus back = load_corpus(f.path, c.ontology);
    REQUIRE(back.sentences.size() == c.sentences.size());
    for (std::size_t i = 0; i < c.sentences.size(); ++i) {
      CHECK(back.sentences[i].sentence.id == c.sentences[i].sentence.id);
      CHECK(back.sentences[i].sentence.tokens == c.sentences[i].sentence.tokens);
      CHECK(back.sentences[i].mentions == c.sentences[i].mentions);
    }
  }
}

TEST_CASE("ontology json round trip and defaults") {
  const auto onto = test::toy_ontology();
  CHECK(onto.types.size() == 5);
  CHECK(onto.null_verbalizer == "none");
  const auto j = ontology_to_json(onto);
  const auto back = parse_ontology_json(j);
  REQUIRE(back.types.size() == onto.types.size());
  CHECK(back.types[0].verbalizers == onto.types[0].verbalizers);
  CHECK(back.types[0].keywords == onto.types[0].keywords);

  // missing verbalizers default to name tokens (composite for multi-word)
  const auto derived = parse_ontology_json(nlohmann::ordered_json::parse(
      R"({"types":[{"name":"Lay-Off"},{"name":"Attack"}]})"));
  CHECK(derived.types[0].verbalizers == std::vector<std::string>{"lay_off"});
  CHECK(derived.types[1].verbalizers == std::vector<std::string>{"attack"});
}

TEST_CASE("sample_few_shot fills K per type and is deterministic") {
  const Corpus c = make_corpus(8, 4);
  const FewShotSplit a = sample_few_shot(c, 3, 99);
  const FewShotSplit b = sample_few_shot(c, 3, 99);
  CHECK(dump(a.train) == dump(b.train));
  CHECK(dump(a.test) == dump(b.test));

  // per-type support is exactly K here (no multi-type sentences)
  std::map<std::string, int> support;
  for (const auto& s : a.train)
    for (const auto& t : gold_type_set(s)) support[t]++;
  CHECK(support["Alpha"] == 3);
  CHECK(support["Beta"] == 3);

  // train/test disjoint and exhaustive
  std::set<std::string> train_ids, test_ids;
  for (const auto& s : a.train) train_ids.insert(s.sentence.id);
  for (const auto& s : a.test) test_ids.insert(s.sentence.id);
  for (const auto& id : train_ids) CHECK(!test_ids.count(id));
  CHECK(train_ids.size() + test_ids.size() == c.sentences.size());
}

TEST_CASE("sample_few_shot caps at availability when K is large") {
  const Corpus c = make_corpus(2, 0);  // 2 per type
  const FewShotSplit s = sample_few_shot(c, 10, 1);
  std::map<std::string, int> support;
  for (const auto& x : s.train)
    for (const auto& t : gold_type_set(x)) support[t]++;
  CHECK(support["Alpha"] == 2);
  CHECK(support["Beta"] == 2);
}

TEST_CASE("sample_few_shot counts multi-type sentences toward every type") {
  Corpus c;
  c.ontology = test::mini_ontology();
  for (int i = 0; i < 6; ++i)
    c.sentences.push_back(test::make_sentence(
        "m" + std::to_string(i), {"spark", "drift"}, {{"Alpha", 0, 0}, {"Beta", 1, 1}}));
  const FewShotSplit s = sample_few_shot(c, 2, 5);
  // each selected sentence supports both types, so 2 sentences suffice
  CHECK(s.train.size() == 2);
}

TEST_CASE("sample_few_shot warns but retains a type with no instances") {
  Corpus c = make_corpus(2, 0);
  c.ontology.types.push_back(EventTypeSpec{"Gamma", {"ghost"}, std::nullopt, {}});
  std::vector<std::string> warnings;
  auto saved = warn_sink();
  warn_sink() = [&](const std::string& m) { warnings.push_back(m); };
  const FewShotSplit s = sample_few_shot(c, 1, 3);
  warn_sink() = saved;
  CHECK(!warnings.empty());
  CHECK(s.train.size() == 2);
}

TEST_CASE("inject_null_instances adds the rounded ratio") {
  Corpus c = make_corpus(5, 0);  // 10 event-bearing sentences
  FewShotSplit split;
  split.train = c.sentences;
  const auto pool = test::toy_null_pool();
  const auto out = inject_null_instances(split, 0.5, pool, 11);
  CHECK(out.train.size() == 15);  // 10 + round(0.5*10)
  CHECK(count_event_bearing(out.train) == 10);

  const auto zero = inject_null_instances(split, 0.0, pool, 11);
  CHECK(zero.train.size() == split.train.size());
}

TEST_CASE("inject_null_instances caps at pool size with a warning") {
  Corpus c = make_corpus(5, 0);
  FewShotSplit split;
  split.train = c.sentences;
  const auto full_pool = test::toy_null_pool();
  std::vector<AnnotatedSentence> pool(full_pool.begin(), full_pool.begin() + 4);
  std::vector<std::string> warnings;
  auto saved = warn_sink();
  warn_sink() = [&](const std::string& m) { warnings.push_back(m); };
  const auto out = inject_null_instances(split, 1.0, pool, 11);
  warn_sink() = saved;
  CHECK(out.train.size() == 14);  // 10 + all 4 available
  CHECK(!warnings.empty());
}

TEST_CASE("inject_null_instances mirrors the ratio onto test unless disabled") {
  Corpus c = make_corpus(4, 0);
  FewShotSplit split = sample_few_shot(c, 2, 1);
  const auto pool = test::toy_null_pool();
  const std::size_t train_events = count_event_bearing(split.train);
  const std::size_t test_events = count_event_bearing(split.test);
  const auto out = inject_null_instances(split, 1.0, pool, 3);
  CHECK(out.train.size() == split.train.size() + train_events);
  CHECK(out.test.size() == split.test.size() + test_events);

  const auto nomirror = inject_null_instances(split, 1.0, pool, 3, false);
  CHECK(nomirror.test.size() == split.test.size());

  // train and test injections draw from disjoint pool portions
  std::set<std::string> ids;
  for (const auto& s : out.train) CHECK(ids.insert(s.sentence.id).second);
  for (const auto& s : out.test) CHECK(ids.insert(s.sentence.id).second);
}

TEST_CASE("inject_null_instances validates the pool") {
  Corpus c = make_corpus(2, 0);
  FewShotSplit split;
  split.train = c.sentences;
  std::vector<AnnotatedSentence> bad_pool = {c.sentences[0]};  // has mentions + id overlap
  CHECK_THROWS_AS(inject_null_instances(split, 0.5, bad_pool, 1), ValidationError);
}
