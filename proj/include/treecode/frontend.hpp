#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "treecode/grammar.hpp"

namespace treecode {

enum class TokenKind {
  kKeyword,
  kIdentifier,
  kString,
  kNumber,
  kOperator,
  kNewline,
  kIndent,
  kDedent,
  kEof,
};

struct Token {
  TokenKind kind;
  std::string lexeme;
  int line = 1;
  int column = 1;
};

struct SourceProgram {
  std::string text;
  std::optional<std::string> origin;
};

std::string_view token_kind_name(TokenKind kind);

// Indentation-aware token stream with comments stripped. Throws ParseError
// on inconsistent indentation or unterminated strings.
std::vector<Token> tokenize(const SourceProgram& src);

// Parses the supported Python subset into a minipy tree. Identifiers become
// Name, string literals (including f-strings) Str, and numbers Num. Throws
// ParseError with position and a hint about the expected token.
Tree parse_program(const SourceProgram& src);

}  // namespace treecode
