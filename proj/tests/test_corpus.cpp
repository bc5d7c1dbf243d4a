#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "helpers.hpp"
#include "treecode/corpus.hpp"
#include "treecode/error.hpp"
#include "treecode/ted.hpp"

using namespace treecode;
using treecode::testing::T;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "treecode_corpus_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::vector<Trace> students(std::size_t count) {
  std::vector<Trace> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(Trace{"st" + std::to_string(i), "a", {{0, T("Module")}, {1, T("Module(Expr(Name))")}}});
    out.push_back(Trace{"st" + std::to_string(i), "b", {{0, T("Module")}}});
  }
  return out;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("load traces") {
  const auto dir = scratch("traces");
  put(dir / "t.jsonl",
      "{\"student\": \"s1\", \"task\": \"t\", \"ts\": 20, \"tree\": \"Module(Expr(Name))\"}\n"
      "{\"student\": \"s1\", \"task\": \"t\", \"ts\": 10, \"source\": \"print('hi')\"}\n"
      "\n"
      "{\"student\": 7, \"task\": 1, \"ts\": 5, \"tree\": \"Module\"}\n"
      "{\"student\": \"s2\", \"task\": \"t\", \"ts\": 5, \"tree\": \"Module(Name)\"}\n"
      "{\"student\": \"s2\", \"task\": \"t\", \"ts\": 6, \"source\": \"x = = 1\"}\n"
      "not json\n"
      "{\"student\": \"s3\", \"task\": \"t\", \"ts\": 1}\n"
      "{\"student\": \"s3\", \"task\": \"t\", \"ts\": 1, \"tree\": \"Module\", \"source\": \"\"}\n");
  TraceLoadReport rep;
  auto traces = load_traces(Grammar::minipy(), (dir / "t.jsonl").string(), &rep);
  CHECK(rep.lines == 8);
  CHECK(rep.malformed == 3);
  CHECK(rep.loaded == 5);
  CHECK(rep.parsed == 3);
  CHECK(rep.skipped == 2);
  CHECK(rep.loaded == rep.parsed + rep.skipped);
  CHECK(rep.messages.size() == 5);
  REQUIRE(traces.size() == 2);
  CHECK(traces[0].student == "s1");
  REQUIRE(traces[0].steps.size() == 2);
  CHECK(traces[0].steps[0].ts == 10);
  CHECK(traces[0].steps[0].tree == T("Module(Expr(Call(Name, Str)))"));
  CHECK(traces[0].steps[1].tree == T("Module(Expr(Name))"));
  CHECK(traces[1].student == "7");
  CHECK(traces[1].task == "1");

  put(dir / "bad.jsonl", "{\"student\": \"s2\", \"task\": \"t\", \"ts\": 5, \"tree\": \"Module(Name)\"}\n");
  CHECK_THROWS_AS(load_traces(Grammar::minipy(), (dir / "bad.jsonl").string()), DataError);
  CHECK_THROWS_AS(load_traces(Grammar::minipy(), (dir / "missing.jsonl").string()), DataError);
}

TEST_CASE("traces round trip through jsonl") {
  const auto dir = scratch("roundtrip");
  auto traces = synth_traces(Grammar::minipy(), 3, 5, 4);
  put(dir / "x.jsonl", traces_to_jsonl(Grammar::minipy(), traces));
  auto back = load_traces(Grammar::minipy(), (dir / "x.jsonl").string());
  REQUIRE(back.size() == traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    CHECK(back[i].student == traces[i].student);
    REQUIRE(back[i].steps.size() == traces[i].steps.size());
    for (std::size_t j = 0; j < traces[i].steps.size(); ++j) {
      CHECK(back[i].steps[j].tree == traces[i].steps[j].tree);
      CHECK(back[i].steps[j].ts == traces[i].steps[j].ts);
    }
  }
}

TEST_CASE("unique trees") {
  const Grammar& g = Grammar::minipy();
  auto c = unique_trees(g, {T("Module"), T("Module(Expr(Name))"), T("Module"), T("Module")});
  CHECK(c.trees == std::vector<Tree>{T("Module"), T("Module(Expr(Name))")});
  CHECK(c.loaded == 4);
  CHECK(c.deduplicated == 2);
  auto d = unique_trees(g, {T("Module"), T("Module(Expr(Name))")});
  CHECK(d.trees.size() == 2);
  CHECK(d.deduplicated == 0);
}

TEST_CASE("load corpus from each format") {
  const Grammar& g = Grammar::minipy();
  const auto dir = scratch("corpus");
  put(dir / "a.py", "print('hi')\n");
  put(dir / "b.tree", "Module(Expr(Name))");
  put(dir / "c.py", "print('other')\n");
  put(dir / "d.py", "def (\n");
  put(dir / "notes.txt", "ignored");
  auto c = load_corpus(g, dir.string());
  CHECK(c.trees == std::vector<Tree>{T("Module(Expr(Call(Name, Str)))"), T("Module(Expr(Name))")});
  CHECK(c.skipped == 1);
  CHECK(c.deduplicated == 1);
  CHECK(c.loaded == 4);

  const auto file = scratch("lines") / "trees.txt";
  put(file, "Module\n\nModule(Name)\nModule(Expr(Num))\nModule\n");
  auto l = load_corpus(g, file.string());
  CHECK(l.trees.size() == 2);
  CHECK(l.skipped == 1);
  CHECK(l.deduplicated == 1);

  CHECK_THROWS_AS(load_corpus(g, scratch("empty").string()), DataError);
}

TEST_CASE("k-fold by student") {
  auto traces = students(10);
  auto splits = kfold_by_student(traces, 5, 42);
  REQUIRE(splits.size() == 5);
  std::multiset<std::string> tested;
  for (const auto& s : splits) {
    std::set<std::string> test_ids, train_ids;
    for (const auto& t : s.test) test_ids.insert(t.student);
    for (const auto& t : s.train) train_ids.insert(t.student);
    CHECK(test_ids.size() == 2);
    CHECK(s.test.size() == 4);
    CHECK(train_ids.size() == 8);
    for (const auto& id : test_ids) {
      CHECK_FALSE(train_ids.count(id));
      tested.insert(id);
    }
  }
  CHECK(tested.size() == 10);
  CHECK(std::set<std::string>(tested.begin(), tested.end()).size() == 10);

  auto again = kfold_by_student(traces, 5, 42);
  for (std::size_t f = 0; f < 5; ++f) {
    REQUIRE(again[f].test.size() == splits[f].test.size());
    for (std::size_t i = 0; i < splits[f].test.size(); ++i) CHECK(again[f].test[i].student == splits[f].test[i].student);
  }

  auto uneven = kfold_by_student(students(7), 3, 1);
  for (const auto& s : uneven) {
    std::set<std::string> ids;
    for (const auto& t : s.test) ids.insert(t.student);
    CHECK(ids.size() >= 2);
    CHECK(ids.size() <= 3);
  }

  auto sub = kfold_by_student(traces, 5, 42, 3);
  for (const auto& s : sub) {
    std::set<std::string> ids;
    for (const auto& t : s.train) ids.insert(t.student);
    CHECK(ids.size() == 3);
  }
  CHECK_THROWS_AS(kfold_by_student(students(3), 5, 1), DataError);
  CHECK_THROWS_AS(kfold_by_student(traces, 1, 1), DataError);
}

TEST_CASE("synthetic corpus") {
  const Grammar& g = Grammar::minipy();
  auto shallow = synth_corpus(g, 1, 20, 1, 3);
  CHECK(shallow.trees == std::vector<Tree>{T("Module")});
  auto a = synth_corpus(g, 5, 300, 6, 4);
  auto b = synth_corpus(g, 5, 300, 6, 4);
  CHECK(a.trees == b.trees);
  CHECK(a.trees.size() == 300);
  std::set<std::string> seen;
  for (const Tree& t : a.trees) {
    REQUIRE(validate(g, t).empty());
    REQUIRE(seen.insert(serialize_tree(g, t)).second);
    for (const auto& group : t.groups) REQUIRE(group.size() <= 4);
  }
  CHECK(synth_corpus(g, 6, 300, 6, 4).trees != a.trees);
  CHECK_THROWS_AS(synth_corpus(g, 1, 0, 6, 4), DataError);
  CHECK_THROWS_AS(synth_corpus(Grammar::parse("start: a\nA(b) -> a\nB(a) -> b\nC -> a\n"), 1, 5, 0, 3),
                  GrammarError);
}

TEST_CASE("growth prefixes") {
  const Grammar& g = Grammar::minipy();
  const Tree target = T("Module(Assign(Name, Call(Name, Str)), If(Compare(Name, Eq, Str), [Expr(Call(Name, Str))], "
                        "[Expr(Call(Name, Str))]))");
  auto chain = growth_prefixes(g, target);
  REQUIRE(chain.size() >= 2);
  CHECK(chain.front() == T("Module"));
  CHECK(chain.back() == target);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    REQUIRE(validate(g, chain[i]).empty());
    if (i > 0) {
      REQUIRE(ted(chain[i - 1], chain[i]) > 0);
      REQUIRE(tree_size(chain[i - 1]) <= tree_size(chain[i]));
    }
  }
  CHECK(growth_prefixes(g, T("Module")) == std::vector<Tree>{T("Module")});
}

TEST_CASE("sized trees") {
  const Grammar& g = Grammar::minipy();
  Rng rng(3);
  for (std::size_t size : {1, 3, 5, 17, 60, 100}) {
    Tree t = sized_tree(g, rng, size);
    REQUIRE(validate(g, t).empty());
    REQUIRE(tree_size(t) == size);
    for (const auto& group : t.groups) REQUIRE(group.size() <= 4);
  }
  // Every statement has at least two nodes.
  CHECK_THROWS_AS(sized_tree(g, rng, 2), DataError);
}

TEST_CASE("synthetic traces") {
  const Grammar& g = Grammar::minipy();
  auto traces = synth_traces(g, 9, 40, 5);
  REQUIRE(traces.size() == 40);
  std::map<std::string, std::string> successor;
  std::set<std::string> ids;
  for (const auto& tr : traces) {
    ids.insert(tr.student);
    CHECK(tr.task == "synth");
    REQUIRE(tr.steps.size() == 5);
    for (std::size_t i = 0; i < tr.steps.size(); ++i) {
      REQUIRE(validate(g, tr.steps[i].tree).empty());
      if (i == 0) continue;
      REQUIRE(tr.steps[i].ts > tr.steps[i - 1].ts);
      REQUIRE(ted(tr.steps[i - 1].tree, tr.steps[i].tree) > 0);
      auto [it, fresh] = successor.emplace(serialize_tree(g, tr.steps[i - 1].tree), serialize_tree(g, tr.steps[i].tree));
      REQUIRE((fresh || it->second == serialize_tree(g, tr.steps[i].tree)));
    }
    CHECK(growth_prefixes(g, tr.steps.back().tree).back() == tr.steps.back().tree);
  }
  CHECK(ids.size() == 40);
  auto again = synth_traces(g, 9, 40, 5);
  CHECK(traces_to_jsonl(g, again) == traces_to_jsonl(g, traces));
  CHECK_THROWS_AS(synth_traces(g, 9, 4, 1), DataError);
}

}
