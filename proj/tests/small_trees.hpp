#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "treecode/grammar.hpp"

namespace treecode::testing {

// All minipy trees (rooted anywhere) with at most `max_nodes` nodes, built by
// enumerating every element and every way to fill its slots.
inline std::vector<Tree> all_small_trees(std::size_t max_nodes) {
  const Grammar& g = Grammar::minipy();
  // by[{s, nt}]: subtrees of exactly s nodes producing nt.
  std::map<std::pair<std::size_t, std::string>, std::vector<Tree>> by;
  auto sequences = [&](auto& self, const std::string& nt, std::size_t budget) -> std::vector<std::vector<Tree>> {
    std::vector<std::vector<Tree>> out{{}};
    for (std::size_t s = 1; s <= budget; ++s) {
      for (const Tree& head : by[{s, nt}]) {
        for (auto& rest : self(self, nt, budget - s)) {
          rest.insert(rest.begin(), head);
          out.push_back(std::move(rest));
        }
      }
    }
    return out;
  };
  for (std::size_t size = 1; size <= max_nodes; ++size) {
    for (std::size_t e = 0; e < g.size(); ++e) {
      const auto& el = g.element(static_cast<int>(e));
      // Distribute size-1 nodes across the slots.
      std::vector<std::vector<std::vector<Tree>>> partial{{}};
      std::vector<std::size_t> used{0};
      for (std::size_t k = 0; k < el.slots.size(); ++k) {
        std::vector<std::vector<std::vector<Tree>>> next;
        std::vector<std::size_t> next_used;
        for (std::size_t p = 0; p < partial.size(); ++p) {
          const std::size_t left = size - 1 - used[p];
          std::vector<std::vector<Tree>> fills;
          if (el.slots[k].kind == SlotKind::kSingle) {
            for (std::size_t s = 1; s <= left; ++s) {
              for (const Tree& t : by[{s, el.slots[k].nonterminal}]) {
                if (!el.slots[k].restrict_to || t.label == *el.slots[k].restrict_to) fills.push_back({t});
              }
            }
          } else {
            fills = sequences(sequences, el.slots[k].nonterminal, left);
          }
          for (auto& f : fills) {
            std::size_t n = 0;
            for (const Tree& t : f) n += tree_size(t);
            auto groups = partial[p];
            groups.push_back(f);
            next.push_back(std::move(groups));
            next_used.push_back(used[p] + n);
          }
        }
        partial = std::move(next);
        used = std::move(next_used);
      }
      for (std::size_t p = 0; p < partial.size(); ++p) {
        if (used[p] == size - 1) by[{size, el.produces}].push_back(Tree(el.name, partial[p]));
      }
    }
  }
  std::vector<Tree> out;
  for (auto& [key, trees] : by) out.insert(out.end(), trees.begin(), trees.end());
  return out;
}

}  // namespace treecode::testing
