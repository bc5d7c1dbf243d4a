#include "treecode/frontend.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "treecode/error.hpp"

namespace treecode {

namespace {

constexpr std::array<std::string_view, 35> kKeywords = {
    "False", "None",   "True",    "and",      "as",       "assert", "async",
    "await", "break",  "class",   "continue", "def",      "del",    "elif",
    "else",  "except", "finally", "for",      "from",     "global", "if",
    "import", "in",    "is",      "lambda",   "nonlocal", "not",    "or",
    "pass",  "raise",  "return",  "try",      "while",    "with",   "yield"};

// Longest operators first so maximal munch works with a linear scan.
constexpr std::array<std::string_view, 47> kOperators = {
    "**=", "//=", ">>=", "<<=", "...", "==", "!=", "<=", ">=", "->", "+=", "-=",
    "*=",  "/=",  "%=",  "&=",  "|=",  "^=", "@=", "**", "//", "<<", ">>", ":=",
    "+",   "-",   "*",   "/",   "%",   "@",  "&",  "|",  "^",  "~",  "<",  ">",
    "(",   ")",   "[",   "]",   "{",   "}",  ",",  ":",  ";",  ".",  "="};

bool is_keyword(std::string_view word) {
  return std::find(kKeywords.begin(), kKeywords.end(), word) != kKeywords.end();
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || (c & 0x80); }
bool ident_char(char c) { return ident_start(c) || std::isdigit(static_cast<unsigned char>(c)); }

bool string_prefix(std::string_view p) {
  if (p.size() > 2) return false;
  return std::all_of(p.begin(), p.end(), [](char c) {
    char l = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return l == 'r' || l == 'b' || l == 'u' || l == 'f';
  });
}

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  std::vector<Token> run() {
    indents_.push_back("");
    while (pos_ < text_.size()) {
      if (at_line_start_ && depth_ == 0) {
        if (handle_line_start()) continue;
      }
      char c = text_[pos_];
      if (c == '\n') {
        if (depth_ == 0 && line_has_tokens_) emit(TokenKind::kNewline, "\n", line_, col_);
        line_has_tokens_ = depth_ > 0 && line_has_tokens_;
        advance();
        at_line_start_ = true;
        continue;
      }
      if (c == ' ' || c == '\t' || c == '\r' || c == '\f') {
        advance();
        continue;
      }
      if (c == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
        continue;
      }
      if (c == '\\' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '\n') {
        advance();
        advance();
        continue;
      }
      if (ident_start(c)) {
        lex_word();
        continue;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) ||
          (c == '.' && pos_ + 1 < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])))) {
        lex_number();
        continue;
      }
      if (c == '"' || c == '\'') {
        lex_string(pos_, line_, col_);
        continue;
      }
      lex_operator();
    }
    if (line_has_tokens_) emit(TokenKind::kNewline, "\n", line_, col_);
    while (indents_.size() > 1) {
      indents_.pop_back();
      emit(TokenKind::kDedent, "", line_, col_);
    }
    emit(TokenKind::kEof, "", line_, col_);
    return std::move(tokens_);
  }

 private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void emit(TokenKind kind, std::string lexeme, int line, int col) {
    tokens_.push_back({kind, std::move(lexeme), line, col});
    if (kind != TokenKind::kNewline && kind != TokenKind::kIndent && kind != TokenKind::kDedent &&
        kind != TokenKind::kEof) {
      line_has_tokens_ = true;
    }
  }

  // Measures indentation of a logical line. Returns true when the whole line
  // was consumed (blank or comment-only).
  bool handle_line_start() {
    std::size_t begin = pos_;
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\f')) {
      advance();
    }
    std::string_view indent = text_.substr(begin, pos_ - begin);
    if (pos_ >= text_.size() || text_[pos_] == '\n' || text_[pos_] == '#' ||
        (text_[pos_] == '\r' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '\n')) {
      while (pos_ < text_.size() && text_[pos_] != '\n') advance();
      if (pos_ < text_.size()) advance();
      return true;
    }
    at_line_start_ = false;
    const std::string& top = indents_.back();
    if (indent == top) return false;
    if (indent.size() > top.size() && indent.substr(0, top.size()) == top) {
      indents_.emplace_back(indent);
      emit(TokenKind::kIndent, std::string(indent), line_, 1);
      return false;
    }
    auto it = std::find(indents_.begin(), indents_.end(), indent);
    if (it == indents_.end()) {
      throw ParseError("inconsistent indentation", line_, col_);
    }
    while (indents_.back() != indent) {
      indents_.pop_back();
      emit(TokenKind::kDedent, "", line_, col_);
    }
    return false;
  }

  void lex_word() {
    int line = line_, col = col_;
    std::size_t begin = pos_;
    while (pos_ < text_.size() && ident_char(text_[pos_])) advance();
    std::string_view word = text_.substr(begin, pos_ - begin);
    if (pos_ < text_.size() && (text_[pos_] == '"' || text_[pos_] == '\'') && string_prefix(word)) {
      lex_string(begin, line, col);
      return;
    }
    emit(is_keyword(word) ? TokenKind::kKeyword : TokenKind::kIdentifier, std::string(word), line, col);
  }

  void lex_number() {
    int line = line_, col = col_;
    std::size_t begin = pos_;
    auto digit_or_sep = [&](bool hex) {
      char c = text_[pos_];
      return std::isdigit(static_cast<unsigned char>(c)) || c == '_' ||
             (hex && std::isxdigit(static_cast<unsigned char>(c)));
    };
    if (text_[pos_] == '0' && pos_ + 1 < text_.size() &&
        std::string_view("xXoObB").find(text_[pos_ + 1]) != std::string_view::npos) {
      advance();
      advance();
      while (pos_ < text_.size() && digit_or_sep(true)) advance();
    } else {
      while (pos_ < text_.size() && digit_or_sep(false)) advance();
      if (pos_ < text_.size() && text_[pos_] == '.') {
        advance();
        while (pos_ < text_.size() && digit_or_sep(false)) advance();
      }
      if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
        std::size_t save = pos_;
        int save_col = col_;
        advance();
        if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) advance();
        if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
          while (pos_ < text_.size() && digit_or_sep(false)) advance();
        } else {
          pos_ = save;
          col_ = save_col;
        }
      }
      if (pos_ < text_.size() && (text_[pos_] == 'j' || text_[pos_] == 'J')) advance();
    }
    emit(TokenKind::kNumber, std::string(text_.substr(begin, pos_ - begin)), line, col);
  }

  // `begin` points at the prefix (if any); pos_ points at the opening quote.
  void lex_string(std::size_t begin, int line, int col) {
    char quote = text_[pos_];
    bool triple = pos_ + 2 < text_.size() && text_[pos_ + 1] == quote && text_[pos_ + 2] == quote;
    std::size_t n_quotes = triple ? 3 : 1;
    for (std::size_t i = 0; i < n_quotes; ++i) advance();
    while (true) {
      if (pos_ >= text_.size()) throw ParseError("unterminated string literal", line, col);
      char c = text_[pos_];
      if (c == '\\') {
        advance();
        if (pos_ < text_.size()) advance();
        continue;
      }
      if (c == '\n' && !triple) throw ParseError("unterminated string literal", line, col);
      if (c == quote) {
        if (!triple) {
          advance();
          break;
        }
        if (pos_ + 2 < text_.size() && text_[pos_ + 1] == quote && text_[pos_ + 2] == quote) {
          advance();
          advance();
          advance();
          break;
        }
      }
      advance();
    }
    emit(TokenKind::kString, std::string(text_.substr(begin, pos_ - begin)), line, col);
  }

  void lex_operator() {
    int line = line_, col = col_;
    for (auto op : kOperators) {
      if (text_.substr(pos_, op.size()) == op) {
        for (std::size_t i = 0; i < op.size(); ++i) advance();
        if (op == "(" || op == "[" || op == "{") ++depth_;
        if ((op == ")" || op == "]" || op == "}") && depth_ > 0) --depth_;
        emit(TokenKind::kOperator, std::string(op), line, col);
        return;
      }
    }
    throw ParseError(std::string("unexpected character '") + text_[pos_] + "'", line, col);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
  int depth_ = 0;
  bool at_line_start_ = true;
  bool line_has_tokens_ = false;
  std::vector<std::string> indents_;
  std::vector<Token> tokens_;
};

// ---------------------------------------------------------------------------

Tree leaf(const char* label) { return Tree(label); }

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  Tree parse_module() {
    std::vector<Tree> body;
    while (!at(TokenKind::kEof)) {
      if (accept(TokenKind::kNewline)) continue;
      if (at(TokenKind::kIndent)) fail("unexpected indent", "a statement");
      parse_statement(body);
    }
    return Tree("Module", {std::move(body)});
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  bool at(TokenKind kind) const { return peek().kind == kind; }
  bool at_op(std::string_view op) const { return at(TokenKind::kOperator) && peek().lexeme == op; }
  bool at_keyword(std::string_view kw) const { return at(TokenKind::kKeyword) && peek().lexeme == kw; }

  const Token& next() { return tokens_[pos_ < tokens_.size() - 1 ? pos_++ : pos_]; }

  bool accept(TokenKind kind) {
    if (!at(kind)) return false;
    next();
    return true;
  }
  bool accept_op(std::string_view op) {
    if (!at_op(op)) return false;
    next();
    return true;
  }

  [[noreturn]] void fail(const std::string& what, const std::string& expected) const {
    const Token& t = peek();
    std::string found = t.kind == TokenKind::kEof       ? "end of input"
                        : t.kind == TokenKind::kNewline ? "end of line"
                        : t.kind == TokenKind::kIndent  ? "indent"
                        : t.kind == TokenKind::kDedent  ? "dedent"
                                                        : "'" + t.lexeme + "'";
    throw ParseError(what + " (found " + found + ", expected " + expected + ")", t.line, t.column);
  }

  void expect_op(std::string_view op, const std::string& context) {
    if (!accept_op(op)) fail("syntax error " + context, "'" + std::string(op) + "'");
  }

  void parse_statement(std::vector<Tree>& out) {
    if (at_keyword("if")) {
      next();
      out.push_back(parse_if_tail());
    } else if (at_keyword("while")) {
      next();
      Tree test = parse_expr();
      expect_op(":", "after while condition");
      std::vector<Tree> body = parse_block();
      if (at_keyword("else")) fail("while/else is not supported", "a statement");
      out.push_back(Tree("While", {{std::move(test)}, std::move(body)}));
    } else if (at_keyword("def")) {
      next();
      out.push_back(parse_def());
    } else {
      parse_simple_line(out);
    }
  }

  // After `if` / `elif`; desugars elif chains into nested If in the else branch.
  Tree parse_if_tail() {
    Tree test = parse_expr();
    expect_op(":", "after if condition");
    std::vector<Tree> body = parse_block();
    std::vector<Tree> orelse;
    if (at_keyword("elif")) {
      next();
      orelse.push_back(parse_if_tail());
    } else if (at_keyword("else")) {
      next();
      expect_op(":", "after else");
      orelse = parse_block();
    }
    return Tree("If", {{std::move(test)}, std::move(body), std::move(orelse)});
  }

  Tree parse_def() {
    if (!at(TokenKind::kIdentifier)) fail("syntax error in def", "a function name");
    next();
    expect_op("(", "after function name");
    std::vector<Tree> params;
    while (!at_op(")")) {
      if (!at(TokenKind::kIdentifier)) fail("syntax error in parameter list", "a parameter name");
      next();
      params.push_back(leaf("Name"));
      if (at_op("=")) fail("default parameter values are not supported", "',' or ')'");
      if (!accept_op(",")) break;
    }
    expect_op(")", "to close parameter list");
    if (at_op("->")) fail("return annotations are not supported", "':'");
    expect_op(":", "after function signature");
    std::vector<Tree> body = parse_block();
    return Tree("FunctionDef", {{leaf("Name")}, std::move(params), std::move(body)});
  }

  std::vector<Tree> parse_block() {
    std::vector<Tree> body;
    if (!accept(TokenKind::kNewline)) {
      parse_simple_line(body);
      return body;
    }
    if (!accept(TokenKind::kIndent)) fail("expected an indented block", "indent");
    while (!accept(TokenKind::kDedent)) {
      if (at(TokenKind::kEof)) fail("unterminated block", "dedent");
      if (accept(TokenKind::kNewline)) continue;
      parse_statement(body);
    }
    return body;
  }

  void parse_simple_line(std::vector<Tree>& out) {
    out.push_back(parse_small());
    while (accept_op(";")) {
      if (at(TokenKind::kNewline) || at(TokenKind::kEof)) break;
      out.push_back(parse_small());
    }
    if (!accept(TokenKind::kNewline) && !at(TokenKind::kEof)) fail("syntax error", "end of line");
  }

  Tree parse_small() {
    if (at_keyword("return")) {
      next();
      if (at(TokenKind::kNewline) || at_op(";") || at(TokenKind::kEof)) {
        fail("return needs a value", "an expression");
      }
      return Tree("Return", {{parse_expr()}});
    }
    if (at(TokenKind::kKeyword) && !is_value_keyword(peek().lexeme)) {
      fail("unsupported statement '" + peek().lexeme + "'", "a statement");
    }
    Token start = peek();
    Tree e = parse_expr();
    if (accept_op("=")) {
      if (e.label != "Name") {
        throw ParseError("can only assign to a name", start.line, start.column);
      }
      Tree value = parse_expr();
      if (at_op("=")) fail("chained assignment is not supported", "end of statement");
      return Tree("Assign", {{std::move(e)}, {std::move(value)}});
    }
    if (at(TokenKind::kOperator) && peek().lexeme.size() >= 2 && peek().lexeme.back() == '=' &&
        peek().lexeme != "==" && peek().lexeme != "!=" && peek().lexeme != "<=" &&
        peek().lexeme != ">=") {
      fail("augmented assignment is not supported", "end of statement");
    }
    return Tree("Expr", {{std::move(e)}});
  }

  static bool is_value_keyword(std::string_view kw) {
    return kw == "True" || kw == "False" || kw == "None";
  }

  Tree parse_expr() {
    Tree left = parse_arith();
    while (true) {
      const char* op = nullptr;
      if (at_op("==")) op = "Eq";
      else if (at_op("!=")) op = "NotEq";
      else if (at_op("<")) op = "Lt";
      else if (at_op(">")) op = "Gt";
      else if (at_op("<=") || at_op(">=") || at_keyword("in") || at_keyword("is") ||
               at_keyword("and") || at_keyword("or") || at_keyword("not")) {
        fail("unsupported operator '" + peek().lexeme + "'", "==, !=, < or >");
      }
      if (!op) return left;
      next();
      Tree right = parse_arith();
      left = Tree("Compare", {{std::move(left)}, {leaf(op)}, {std::move(right)}});
    }
  }

  Tree parse_arith() {
    Tree left = parse_term();
    while (at_op("+") || at_op("-")) {
      const char* op = next().lexeme == "+" ? "Add" : "Sub";
      Tree right = parse_term();
      left = Tree("BinOp", {{std::move(left)}, {leaf(op)}, {std::move(right)}});
    }
    return left;
  }

  Tree parse_term() {
    Tree left = parse_unary();
    while (true) {
      const char* op = nullptr;
      if (at_op("*")) op = "Mult";
      else if (at_op("/")) op = "Div";
      else if (at_op("//") || at_op("%") || at_op("**") || at_op("@")) {
        fail("unsupported operator '" + peek().lexeme + "'", "+, -, * or /");
      }
      if (!op) return left;
      next();
      Tree right = parse_unary();
      left = Tree("BinOp", {{std::move(left)}, {leaf(op)}, {std::move(right)}});
    }
  }

  Tree parse_unary() {
    if (at_op("-") || at_op("+")) {
      next();
      // Signed literals fold into Num; other unary operators are outside the subset.
      if (!at(TokenKind::kNumber)) fail("unary operators are only supported on numbers", "a number");
      next();
      return leaf("Num");
    }
    return parse_postfix();
  }

  Tree parse_postfix() {
    Tree e = parse_atom();
    while (true) {
      if (accept_op("(")) {
        std::vector<Tree> args;
        while (!at_op(")")) {
          if (at(TokenKind::kIdentifier) && tokens_[pos_ + 1].kind == TokenKind::kOperator &&
              tokens_[pos_ + 1].lexeme == "=") {
            fail("keyword arguments are not supported", "an expression");
          }
          args.push_back(parse_expr());
          if (!accept_op(",")) break;
        }
        expect_op(")", "to close call arguments");
        e = Tree("Call", {{std::move(e)}, std::move(args)});
      } else if (at_op(".") || at_op("[")) {
        fail("attribute access and subscripts are not supported", "an operator");
      } else {
        return e;
      }
    }
  }

  Tree parse_atom() {
    if (at(TokenKind::kIdentifier)) {
      next();
      return leaf("Name");
    }
    if (at(TokenKind::kKeyword) && is_value_keyword(peek().lexeme)) {
      next();
      return leaf("Name");
    }
    if (at(TokenKind::kNumber)) {
      next();
      return leaf("Num");
    }
    if (at(TokenKind::kString)) {
      while (accept(TokenKind::kString)) {
      }
      return leaf("Str");
    }
    if (accept_op("(")) {
      if (at_op(")")) fail("tuples are not supported", "an expression");
      Tree e = parse_expr();
      expect_op(")", "to close parenthesis");
      return e;
    }
    fail("syntax error", "an expression");
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view token_kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::kKeyword: return "keyword";
    case TokenKind::kIdentifier: return "identifier";
    case TokenKind::kString: return "string";
    case TokenKind::kNumber: return "number";
    case TokenKind::kOperator: return "operator";
    case TokenKind::kNewline: return "newline";
    case TokenKind::kIndent: return "indent";
    case TokenKind::kDedent: return "dedent";
    case TokenKind::kEof: return "eof";
  }
  return "?";
}

std::vector<Token> tokenize(const SourceProgram& src) { return Lexer(src.text).run(); }

Tree parse_program(const SourceProgram& src) { return Parser(tokenize(src)).parse_module(); }

}  // namespace treecode
