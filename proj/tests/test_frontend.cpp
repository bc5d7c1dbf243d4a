#include "doctest.h"

#include <algorithm>
#include <map>

#include "helpers.hpp"
#include "treecode/error.hpp"
#include "treecode/frontend.hpp"

using namespace treecode;
using treecode::testing::T;

namespace {

Tree P(const std::string& src) { return parse_program({src, std::nullopt}); }

std::vector<TokenKind> kinds(const std::string& src) {
  std::vector<TokenKind> out;
  for (const auto& t : tokenize({src, std::nullopt})) out.push_back(t.kind);
  return out;
}

const char* kReference =
    "x = input('Please enter a number: ')\n"
    "if x == 'hello':\n"
    "    print('Hello!')\n"
    "else:\n"
    "    print(f'You entered {x}')\n";

}  // namespace

TEST_SUITE("frontend") {

TEST_CASE("tokenize simple assignment") {
  auto toks = tokenize({"x = 1\n", std::nullopt});
  REQUIRE(toks.size() == 5);
  CHECK(toks[0].kind == TokenKind::kIdentifier);
  CHECK(toks[0].lexeme == "x");
  CHECK(toks[1].kind == TokenKind::kOperator);
  CHECK(toks[1].lexeme == "=");
  CHECK(toks[2].kind == TokenKind::kNumber);
  CHECK(toks[3].kind == TokenKind::kNewline);
  CHECK(toks[4].kind == TokenKind::kEof);
  CHECK(toks[2].line == 1);
  CHECK(toks[2].column == 5);
}

TEST_CASE("indent and dedent") {
  auto k = kinds("if x:\n    y = 1\n");
  CHECK(std::count(k.begin(), k.end(), TokenKind::kIndent) == 1);
  CHECK(std::count(k.begin(), k.end(), TokenKind::kDedent) == 1);
  auto tabs = kinds("while x:\n\ty = 1\n\tif y:\n\t\tz = 2\n");
  CHECK(std::count(tabs.begin(), tabs.end(), TokenKind::kIndent) == 2);
  CHECK(std::count(tabs.begin(), tabs.end(), TokenKind::kDedent) == 2);
  // Comments and blank lines do not affect indentation.
  auto c = kinds("if x:\n    # note\n\n    y = 1  # trailing\n");
  CHECK(std::count(c.begin(), c.end(), TokenKind::kIndent) == 1);
}

TEST_CASE("lexer errors carry positions") {
  try {
    tokenize({"x = 'abc", std::nullopt});
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
    CHECK(e.column() == 5);
  }
  CHECK_THROWS_AS(tokenize({"if x:\n    y = 1\n  z = 2\n", std::nullopt}), ParseError);
  CHECK_THROWS_AS(tokenize({"s = '''open\n", std::nullopt}), ParseError);
}

TEST_CASE("hello world") {
  CHECK(P("print('Hello, world!')") == T("Module(Expr(Call(Name, Str)))"));
  CHECK(P("") == T("Module"));
  CHECK(P("\n# only a comment\n") == T("Module"));
}

TEST_CASE("reference solution") {
  Tree t = P(kReference);
  CHECK(t == T("Module(Assign(Name, Call(Name, Str)), If(Compare(Name, Eq, Str), [Expr(Call(Name, Str))], "
               "[Expr(Call(Name, Str))]))"));
  CHECK(tree_size(t) == 19);
  CHECK(validate(Grammar::minipy(), t).empty());
}

TEST_CASE("elif nests in the else branch") {
  Tree t = P("if a:\n    x = 1\nelif b:\n    x = 2\nelse:\n    x = 3\n");
  CHECK(t == T("Module(If(Name, [Assign(Name, Num)], [If(Name, [Assign(Name, Num)], [Assign(Name, Num)])]))"));
  CHECK(P("if a:\n    x = 1\n") == T("Module(If(Name, [Assign(Name, Num)], []))"));
}

TEST_CASE("statements and expressions") {
  CHECK(P("def f(a, b):\n    return a + b * 2\n") ==
        T("Module(FunctionDef(Name, Name, Name, Return(BinOp(Name, Add, BinOp(Name, Mult, Num)))))"));
  CHECK(P("while n > 0:\n    n = n - 1\n") ==
        T("Module(While(Compare(Name, Gt, Num), Assign(Name, BinOp(Name, Sub, Num))))"));
  CHECK(P("x = (1 + 2) / 3 - 4\n") == T("Module(Assign(Name, BinOp(BinOp(BinOp(Num, Add, Num), Div, Num), Sub, Num)))"));
  CHECK(P("y = a != b\n") == T("Module(Assign(Name, Compare(Name, NotEq, Name)))"));
  CHECK(P("y = a < b + 1\n") == T("Module(Assign(Name, Compare(Name, Lt, BinOp(Name, Add, Num))))"));
  CHECK(P("f(g(1), 'a' 'b', -2.5, True)\n") == T("Module(Expr(Call(Name, Call(Name, Num), Str, Num, Name)))"));
  CHECK(P("total = f(\n    1,\n    2)\n") == T("Module(Assign(Name, Call(Name, Num, Num)))"));
}

TEST_CASE("unsupported syntax is rejected with a position") {
  for (const char* src : {"x += 1\n", "x = y = 1\n", "a.b = 1\n", "f(x=1)\n", "x = a <= b\n", "x = a % 2\n",
                          "while x:\n    y = 1\nelse:\n    y = 2\n", "return\n", "x = [1]\n", "def f(:\n"}) {
    CAPTURE(src);
    CHECK_THROWS_AS(P(src), ParseError);
  }
  try {
    P("x = 1\ny = (2\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() >= 2);
  }
}

TEST_CASE("literal collapse") {
  Tree a = P("name = input('one')\nprint(name + 'x')\n");
  Tree b = P("other = input(\"two two\")\nprint(other + f'{z}')\n");
  CHECK(a == b);
  CHECK(P("x = 1\n") == P("y = 99.5e3\n"));
}

TEST_CASE("every parse validates") {
  const Grammar& g = Grammar::minipy();
  for (const char* src : {kReference, "def f(x):\n    if x:\n        return 1\n    return f(x - 1)\n",
                          "a = 1\nwhile a < 10:\n    a = a * 2\nprint(a)\n"}) {
    CHECK(validate(g, P(src)).empty());
    CHECK(P(src) == P(src));
  }
}

}
