#pragma once

#include <string>
#include <vector>

#include "treecode/corpus.hpp"
#include "treecode/grammar.hpp"

namespace treecode::testing {

inline Tree T(const std::string& text) { return parse_tree(Grammar::minipy(), text); }

// Seeded random minipy trees of assorted shapes.
inline std::vector<Tree> random_trees(std::uint64_t seed, std::size_t count, std::size_t depth = 5,
                                      std::size_t list = 3) {
  return synth_corpus(Grammar::minipy(), seed, count, depth, list).trees;
}

}  // namespace treecode::testing
