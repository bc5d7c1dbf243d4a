#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "json.hpp"
#include "tiny_oracle.hpp"
#include "treecode/autoencoder.hpp"
#include "treecode/error.hpp"
#include "treecode/io.hpp"

using namespace treecode;
using treecode::testing::T;

namespace {

ModelConfig small_config(std::size_t n, std::uint64_t seed = 1) {
  ModelConfig c;
  c.latent_dim = n;
  c.seed = seed;
  return c;
}

void fill_block(Model& m, const std::string& name, double value) {
  const auto& b = m.block(name);
  std::fill_n(m.params().begin() + b.offset, b.size(), value);
}

// Independent bottom-up evaluation of the encoder from the named blocks.
Vec hand_encode(const Model& m, const Tree& t) {
  const auto& g = m.grammar();
  const auto& el = g.element(g.index_of(t.label));
  Vec acc = m.block_matrix("enc." + t.label + ".b").col_vec(0);
  for (std::size_t k = 0; k < el.slots.size(); ++k) {
    Vec s(m.dim());
    for (const Tree& c : t.groups[k]) s += hand_encode(m, c);
    acc += matvec(m.block_matrix("enc." + t.label + ".U" + std::to_string(k)), s);
  }
  for (double& x : acc) x = std::tanh(x);
  return acc;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "treecode_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

const std::vector<Tree>& grad_batch() {
  static const std::vector<Tree> batch{
      T("Module(Assign(Name, Call(Name, Str)), If(Compare(Name, Eq, Str), [Expr(Call(Name, Str))], "
        "[Expr(Call(Name, Str))]))"),
      T("Module(FunctionDef(Name, Name, Return(BinOp(Name, Add, Num))), While(Compare(Name, Lt, Num), "
        "Assign(Name, BinOp(Name, Mult, Num))))"),
      T("Module(Expr(Call(Name)), If(Name, [], [Expr(Name), Return(Num)]))"),
  };
  return batch;
}

// The floor sits at the central-difference round-off level for h = 1e-5.
double rel_error(double a, double f) { return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-5}); }

}  // namespace

TEST_SUITE("autoencoder") {

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.check());
  c.latent_dim = 0;
  CHECK_THROWS_AS(c.check(), DataError);
  c = {};
  c.beta = -1;
  CHECK_THROWS_AS(c.check(), DataError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.check(), DataError);
  c = {};
  c.max_decode_nodes = 0;
  CHECK_THROWS_AS(c.check(), DataError);
  c = {};
  c.max_list_length = 0;
  CHECK_THROWS_AS(Model(Grammar::minipy(), c), DataError);
}

TEST_CASE("parameter layout") {
  Model m(Grammar::minipy(), small_config(8));
  std::size_t total = 0;
  std::set<std::string> families;
  for (const auto& b : m.blocks()) {
    CHECK(b.offset == total);
    total += b.size();
    families.insert(b.family);
  }
  CHECK(total == m.params().size());
  CHECK(families == std::set<std::string>{"U", "b", "H", "h0", "V", "c", "gru_W", "gru_U", "gru_b", "stop_w",
                                          "stop_b", "out_W", "out_b"});
  CHECK(m.block("dec.H").rows == Grammar::minipy().size());
  CHECK(m.block("enc.If.U2").rows == 8);
  CHECK_THROWS_AS(m.block("enc.If.U3"), DataError);
  const double bound = 1.0 / std::sqrt(8.0);
  for (double x : m.params()) REQUIRE(std::abs(x) <= bound);
}

TEST_CASE("encode trivial cases") {
  Model m(Grammar::minipy(), small_config(6));
  fill_block(m, "enc.Name.b", 0.0);
  CHECK(encode(m, T("Name")) == Vec(6));
  fill_block(m, "enc.Module.b", 0.0);
  CHECK(encode(m, T("Module")) == Vec(6));
}

TEST_CASE("encode matches an independent recursion") {
  Model m(Grammar::minipy(), small_config(16, 3));
  for (const char* text : {"Module(Expr(Call(Name, Str)))", "Call(Name, Str)",
                           "Module(If(Compare(Name, Eq, Str), [Expr(Name), Expr(Num)], [Return(Name)]))"}) {
    Vec a = encode(m, T(text));
    Vec b = hand_encode(m, T(text));
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-13));
  }
  for (const Tree& t : treecode::testing::random_trees(5, 200)) {
    for (double x : encode(m, t)) {
      REQUIRE(x > -1.0);
      REQUIRE(x < 1.0);
    }
    REQUIRE(encode(m, t) == encode(m, t));
  }
  CHECK_THROWS_AS(encode(m, Tree("Module", {{Tree("Bogus")}})), DataError);
  CHECK_THROWS_AS(encode(m, Tree("Call", {{T("Name")}, {Tree("Add")}})), DataError);
}

TEST_CASE("decode is total and valid") {
  Model m(Grammar::minipy(), small_config(32, 2));
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    Tree t = decode(m, gauss(rng, 32));
    REQUIRE(t.label == "Module");
    REQUIRE(validate(Grammar::minipy(), t).empty());
  }
  CHECK_THROWS_AS(decode(m, Vec(5)), DataError);
}

TEST_CASE("decode respects the node budget") {
  ModelConfig c = small_config(8, 4);
  c.max_decode_nodes = 5;
  c.max_list_length = 3;
  Model m(Grammar::minipy(), c);
  // Push every list toward continuing.
  for (const auto& b : m.blocks()) {
    if (b.family == "stop_b") fill_block(m, b.name, 50.0);
  }
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    Tree t = decode(m, gauss(rng, 8));
    REQUIRE(validate(Grammar::minipy(), t).empty());
    // Pending single slots are closed with minimal completions after the budget.
    REQUIRE(tree_size(t) <= 5 + 3 * 4);
  }
}

TEST_CASE("choice distribution is normalized") {
  const Grammar& g = Grammar::minipy();
  Model m(g, small_config(12, 5));
  Rng rng(8);
  std::vector<std::vector<int>> sets{g.start_choices()};
  for (std::size_t e = 0; e < g.size(); ++e) {
    for (std::size_t k = 0; k < g.element(static_cast<int>(e)).slots.size(); ++k) {
      sets.push_back(g.slot_choices(static_cast<int>(e), static_cast<int>(k)));
    }
  }
  for (int trial = 0; trial < 50; ++trial) {
    Vec v = gauss(rng, 12);
    for (const auto& s : sets) {
      auto p = choice_distribution(m, v, s);
      double total = 0;
      for (double x : p) total += x;
      REQUIRE(std::abs(total - 1.0) <= 1e-12);
    }
  }
  const std::vector<int> only{g.index_of("Module")};
  CHECK(choice_distribution(m, gauss(rng, 12), only) == std::vector<double>{1.0});
  CHECK_THROWS_AS(choice_distribution(m, Vec(12), std::vector<int>{}), DataError);
}

TEST_CASE("log probabilities") {
  Model m(Grammar::minipy(), small_config(8, 6));
  Rng rng(2);
  for (const Tree& t : treecode::testing::random_trees(9, 50)) {
    REQUIRE(decode_logprob(m, gauss(rng, 8), t) <= 0.0);
  }
  CHECK_THROWS_AS(decode_logprob(m, Vec(8), T("Name")), DataError);
  CHECK_THROWS_AS(decode_logprob(m, Vec(3), T("Module")), DataError);
  ModelConfig c = small_config(8);
  c.max_list_length = 1;
  Model capped(Grammar::minipy(), c);
  CHECK_THROWS_AS(decode_logprob(capped, Vec(8), T("Module(Expr(Name), Expr(Name))")), DataError);
  CHECK_THROWS_AS(encode(capped, T("Module(Expr(Name), Expr(Name))")), DataError);
}

TEST_CASE("tiny grammar sample space sums to one") {
  using treecode::testing::TinyOracle;
  ModelConfig c = small_config(4, 11);
  c.max_list_length = 2;
  Model m(treecode::testing::tiny_grammar(), c);
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec z = gauss(rng, 4);
    TinyOracle oracle(m);
    auto en = oracle.enumerate(z, 3);
    CHECK(en.trees.size() == 10);
    double total = en.truncated;
    for (const auto& [text, p] : en.trees) {
      const Tree t = parse_tree(m.grammar(), text);
      const double lp = decode_logprob(m, z, t);
      CHECK(std::exp(lp) == doctest::Approx(p).epsilon(1e-12));
      CHECK(oracle.prob(z, t) == doctest::Approx(p).epsilon(1e-12));
      total += std::exp(lp);
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
}

TEST_CASE("kl term") {
  CHECK(kl_term(Vec(4)) == 0.0);
  CHECK(kl_term(Vec{3, 4}) == doctest::Approx(12.5));
  CHECK(kl_term(Vec{6, 8}) == doctest::Approx(4 * 12.5));
}

TEST_CASE("loss is deterministic and nonnegative without the kl weight") {
  ModelConfig c = small_config(8, 7);
  c.beta = 0.0;
  Model m(Grammar::minipy(), c);
  const auto& batch = grad_batch();
  Rng a(3), b(3);
  const double la = loss(m, batch, a);
  CHECK(la == loss(m, batch, b));
  CHECK(la >= 0.0);
  Rng r(3);
  CHECK(grad(m, batch, r).loss == la);
  CHECK_THROWS_AS(loss(m, std::span<const Tree>{}, a), DataError);
}

TEST_CASE("gradient matches finite differences for every family") {
  ModelConfig c = small_config(8, 21);
  c.beta = 0.1;
  Model m(Grammar::minipy(), c);
  const auto& batch = grad_batch();
  Rng r0(99);
  const Gradient gr = grad(m, batch, r0);

  std::set<std::string> present;
  std::function<void(const Tree&)> visit = [&](const Tree& t) {
    present.insert(t.label);
    for (const auto* ch : t.children()) visit(*ch);
  };
  for (const Tree& t : batch) visit(t);

  std::map<std::string, std::vector<std::size_t>> coords;
  for (const auto& b : m.blocks()) {
    const std::string owner = b.name.substr(4, b.name.find('.', 4) - 4);
    if (b.family != "H" && b.family != "h0" && !present.count(owner)) continue;
    for (std::size_t i = 0; i < b.size(); ++i) coords[b.family].push_back(b.offset + i);
  }
  CHECK(coords.size() == 13);

  Rng pick(5);
  const double h = 1e-5;
  for (const auto& [family, idx] : coords) {
    double worst = 0;
    for (int s = 0; s < 20; ++s) {
      const std::size_t i = idx[pick.uniform_index(idx.size())];
      const double keep = m.params()[i];
      m.params()[i] = keep + h;
      Rng rp(99);
      const double up = loss(m, batch, rp);
      m.params()[i] = keep - h;
      Rng rm(99);
      const double down = loss(m, batch, rm);
      m.params()[i] = keep;
      worst = std::max(worst, rel_error(gr.values[i], (up - down) / (2 * h)));
    }
    CAPTURE(family);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("masked scorer rows receive no gradient") {
  const Grammar& g = Grammar::minipy();
  Model m(g, small_config(8));
  std::fill(m.params().begin(), m.params().end(), 0.0);
  const std::vector<Tree> batch{T("Module(Expr(Name), Expr(Name))"), T("Module(Expr(Name), Expr(Name))")};
  Rng rng(1);
  const Gradient gr = grad(m, batch, rng);
  const std::size_t n = 8;
  for (const char* op : {"Add", "Sub", "Mult", "Div", "Eq", "NotEq", "Lt", "Gt"}) {
    const std::size_t row = static_cast<std::size_t>(g.index_of(op));
    for (std::size_t j = 0; j < n; ++j) REQUIRE(gr.values[m.scorer_h() + row * n + j] == 0.0);
    REQUIRE(gr.values[m.scorer_h0() + row] == 0.0);
  }
  double touched = 0;
  for (std::size_t j = 0; j < g.size(); ++j) touched += std::abs(gr.values[m.scorer_h0() + j]);
  CHECK(touched > 0);
}

TEST_CASE("kl gradient by hand on a one-node tree") {
  ModelConfig c = small_config(5, 13);
  const std::vector<Tree> batch{T("Module")};
  c.beta = 0.0;
  Model plain(Grammar::minipy(), c);
  c.beta = 0.7;
  Model weighted(Grammar::minipy(), c);
  Rng r1(4), r2(4), r3(4);
  const Gradient g0 = grad(plain, batch, r1);
  const Gradient g1 = grad(weighted, batch, r2);
  const Vec eps = gauss(r3, 5);
  const Vec b = weighted.block_matrix("enc.Module.b").col_vec(0);
  const std::size_t off = weighted.block("enc.Module.b").offset;
  for (std::size_t j = 0; j < 5; ++j) {
    const double z = std::tanh(b[j]);
    const double expected = 0.7 * (z + eps[j]) * (1 - z * z);
    CHECK(g1.values[off + j] - g0.values[off + j] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("training") {
  const auto corpus = treecode::testing::random_trees(3, 40, 4, 2);
  ModelConfig c = small_config(8, 9);
  c.batch_size = 4;

  Model still(Grammar::minipy(), c);
  const std::vector<double> before(still.params().begin(), still.params().end());
  CHECK(train(still, corpus, 0).empty());
  CHECK(std::equal(before.begin(), before.end(), still.params().begin()));

  Model a(Grammar::minipy(), c), b(Grammar::minipy(), c);
  std::size_t calls = 0;
  TrainOptions opts;
  opts.on_epoch = [&](std::size_t, double) { ++calls; };
  const auto ca = train(a, corpus, 30, opts);
  const auto cb = train(b, corpus, 30);
  CHECK(calls == 30);
  CHECK(ca == cb);
  CHECK(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  CHECK(a.meta().epochs_trained == 30);
  CHECK(a.meta().final_loss == ca.back());
  CHECK_THROWS_AS(train(a, std::span<const Tree>{}, 1), DataError);
}

TEST_CASE("smoothed training loss decreases") {
  const auto corpus = treecode::testing::random_trees(4, 60, 4, 3);
  ModelConfig c = small_config(16, 2);
  c.batch_size = 8;
  c.learning_rate = 3e-3;
  Model m(Grammar::minipy(), c);
  const auto curve = train(m, corpus, 600);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    head += curve[i];
    tail += curve[curve.size() - 100 + i];
  }
  CHECK(tail < head);
}

TEST_CASE("save and load round trip") {
  ModelConfig c = small_config(8, 31);
  c.beta = 0.25;
  Model m(Grammar::minipy(), c);
  train(m, treecode::testing::random_trees(6, 20), 5);
  const auto path = temp_path("model.json").string();
  save_model(m, path);
  Model back = load_model(path);
  CHECK(std::equal(m.params().begin(), m.params().end(), back.params().begin(), back.params().end()));
  CHECK(back.config().beta == 0.25);
  CHECK(back.config().seed == 31);
  CHECK(back.meta().epochs_trained == 5);
  CHECK(back.meta().final_loss == m.meta().final_loss);
  CHECK(back.grammar_hash() == m.grammar_hash());
  for (const Tree& t : treecode::testing::random_trees(7, 50)) REQUIRE(encode(back, t) == encode(m, t));

  auto j = nlohmann::json::parse(read_file(path));
  j["grammar_hash"] = "0000000000000000";
  write_file_atomic(path, j.dump());
  CHECK_THROWS_AS(load_model(path), GrammarError);

  save_model(m, path);
  j = nlohmann::json::parse(read_file(path));
  j["version"] = 2;
  write_file_atomic(path, j.dump());
  CHECK_THROWS_AS(load_model(path), DataError);

  save_model(m, path);
  j = nlohmann::json::parse(read_file(path));
  j["params"]["dec.h0"].erase(0);
  write_file_atomic(path, j.dump());
  CHECK_THROWS_AS(load_model(path), DataError);
  CHECK_THROWS_AS(load_model(temp_path("missing.json").string()), DataError);

  Model other(Grammar::parse("start: t\nNode(t*) -> t\nLeaf -> t\n"), c);
  CHECK_THROWS_AS(require_grammar(other, Grammar::minipy()), GrammarError);
  CHECK_NOTHROW(require_grammar(m, Grammar::minipy()));
}

}
