#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace treecode {

enum class SlotKind { kSingle, kList };

struct Slot {
  std::string nonterminal;
  SlotKind kind = SlotKind::kSingle;
  // When set, the slot only admits this element even though the
  // nonterminal has other producers (e.g. assignment targets must be Name).
  std::optional<std::string> restrict_to;
};

struct SyntacticElement {
  std::string name;
  std::string produces;
  std::vector<Slot> slots;
};

// Ordered labeled tree whose children are grouped per grammar slot. A
// single-kind slot holds exactly one subtree, a list-kind slot any number.
struct Tree {
  std::string label;
  std::vector<std::vector<Tree>> groups;

  Tree() = default;
  explicit Tree(std::string l) : label(std::move(l)) {}
  Tree(std::string l, std::vector<std::vector<Tree>> g) : label(std::move(l)), groups(std::move(g)) {}

  // Children across all groups, in slot order.
  std::vector<const Tree*> children() const;

  friend bool operator==(const Tree& a, const Tree& b) {
    return a.label == b.label && a.groups == b.groups;
  }
};

std::size_t tree_size(const Tree& t);

class Grammar {
 public:
  // Parses the line format `Element(nt1, nt2*, nt3[Elem]) -> NT` plus a
  // single `start: NT` line. `*` marks a list slot, `[Elem]` restricts a
  // slot to one element. `#` starts a comment. Throws GrammarError.
  static Grammar parse(std::string_view text);

  // The built-in Python subset.
  static const Grammar& minipy();
  static std::string_view minipy_text();

  const std::string& start() const { return start_; }
  const std::vector<SyntacticElement>& elements() const { return elements_; }
  const std::vector<std::string>& nonterminals() const { return nonterminals_; }
  std::size_t size() const { return elements_.size(); }

  std::optional<int> find(std::string_view element) const;
  int index_of(std::string_view element) const;  // throws GrammarError
  const SyntacticElement& element(int index) const { return elements_[index]; }

  // Element indices admissible at the root.
  const std::vector<int>& start_choices() const { return start_choices_; }
  // Element indices admissible in slot `slot` of element `element`.
  const std::vector<int>& slot_choices(int element, int slot) const {
    return slot_choices_[element][slot];
  }
  bool admits(int element, int slot, int child) const;

  // True when two list slots of the element admit a common element, so a
  // flattened child sequence would not determine the grouping.
  bool has_ambiguous_lists(int element) const { return ambiguous_[element]; }

  // Canonical text form (round-trips through parse) and its FNV-1a hash.
  std::string text() const;
  std::uint64_t hash() const;

 private:
  std::string start_;
  std::vector<std::string> nonterminals_;
  std::vector<SyntacticElement> elements_;
  std::unordered_map<std::string, int> by_name_;
  std::vector<int> start_choices_;
  std::vector<std::vector<std::vector<int>>> slot_choices_;
  std::vector<bool> ambiguous_;
};

struct Violation {
  std::string path;  // slash-separated child positions from the root
  std::string message;
};

// Empty iff `t` is a well-formed tree of `g` rooted at the start symbol.
std::vector<Violation> validate(const Grammar& g, const Tree& t);
// Same checks, but the root may produce any nonterminal.
std::vector<Violation> validate_subtree(const Grammar& g, const Tree& t);

// Text form `Module(Expr(Call(Name, Str)))`. List groups are flattened in
// slot order; for elements with ambiguous list slots every list group is
// bracketed, e.g. `If(Name, [Expr(Name)], [])`.
std::string serialize_tree(const Grammar& g, const Tree& t);
Tree parse_tree(const Grammar& g, std::string_view text);

// Per element: the fewest nodes (or levels) of any complete subtree rooted
// there, with every list left empty. Infinity when no finite derivation exists.
std::vector<double> min_completion_sizes(const Grammar& g);
std::vector<double> min_completion_depths(const Grammar& g);

// Smallest subtree over `choices`; ties go to the lowest element index.
// Throws GrammarError when none is finite.
Tree minimal_completion(const Grammar& g, const std::vector<int>& choices);

}  // namespace treecode
