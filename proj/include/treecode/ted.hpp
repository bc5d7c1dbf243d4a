#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "treecode/grammar.hpp"

namespace treecode {

// Postorder view of an ordered labeled tree for Zhang–Shasha. Slot groups
// are flattened into a single child sequence.
struct FlatTree {
  std::vector<std::string> labels;    // postorder
  std::vector<std::size_t> leftmost;  // leftmost leaf descendant of each node
  std::vector<std::size_t> keyroots;  // ascending

  static FlatTree from(const Tree& t);
  std::size_t size() const { return labels.size(); }
};

// Unit-cost tree edit distance (deletions, insertions, relabelings).
std::size_t ted(const Tree& a, const Tree& b);
std::size_t ted(const FlatTree& a, const FlatTree& b);

// Exhaustive memoized forest recursion without keyroot decomposition.
// Intended for testing; throws DataError when the combined size exceeds 12.
std::size_t ted_oracle(const Tree& a, const Tree& b);

}  // namespace treecode
