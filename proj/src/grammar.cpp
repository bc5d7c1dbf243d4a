#include "treecode/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "treecode/error.hpp"

namespace treecode {

namespace {

constexpr std::string_view kMinipy = R"(# minipy: the Python subset covered by the frontend
start: mod
Module(stmt*) -> mod
Assign(expr[Name], expr) -> stmt
Expr(expr) -> stmt
If(expr, stmt*, stmt*) -> stmt
While(expr, stmt*) -> stmt
Return(expr) -> stmt
FunctionDef(expr[Name], expr*, stmt*) -> stmt
Call(expr, expr*) -> expr
Compare(expr, cmpop, expr) -> expr
BinOp(expr, op, expr) -> expr
Name -> expr
Str -> expr
Num -> expr
Add -> op
Sub -> op
Mult -> op
Div -> op
Eq -> cmpop
NotEq -> cmpop
Lt -> cmpop
Gt -> cmpop
)";

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == ',') {
      out.push_back(trim(s.substr(begin, i - begin)));
      begin = i + 1;
    }
  }
  return out;
}

std::string grammar_line_error(int line, const std::string& what) {
  return "grammar line " + std::to_string(line) + ": " + what;
}

Slot parse_slot(std::string_view s, int line) {
  Slot slot;
  if (auto open = s.find('['); open != std::string_view::npos) {
    if (s.back() != ']') throw GrammarError(grammar_line_error(line, "unterminated restriction"));
    auto inner = trim(s.substr(open + 1, s.size() - open - 2));
    if (!is_identifier(inner)) throw GrammarError(grammar_line_error(line, "bad restriction"));
    slot.restrict_to = std::string(inner);
    s = trim(s.substr(0, open));
  }
  if (!s.empty() && s.back() == '*') {
    slot.kind = SlotKind::kList;
    s = trim(s.substr(0, s.size() - 1));
  }
  if (!is_identifier(s)) {
    throw GrammarError(grammar_line_error(line, "bad slot '" + std::string(s) + "'"));
  }
  slot.nonterminal = std::string(s);
  return slot;
}

}  // namespace

std::vector<const Tree*> Tree::children() const {
  std::vector<const Tree*> out;
  for (const auto& group : groups) {
    for (const auto& child : group) out.push_back(&child);
  }
  return out;
}

std::size_t tree_size(const Tree& t) {
  std::size_t n = 1;
  for (const auto& group : t.groups) {
    for (const auto& child : group) n += tree_size(child);
  }
  return n;
}

Grammar Grammar::parse(std::string_view text) {
  Grammar g;
  std::optional<std::string> start;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.rfind("start:", 0) == 0) {
      if (start) throw GrammarError(grammar_line_error(line_no, "duplicate start line"));
      auto nt = trim(line.substr(6));
      if (!is_identifier(nt)) throw GrammarError(grammar_line_error(line_no, "bad start symbol"));
      start = std::string(nt);
      continue;
    }

    auto arrow = line.find("->");
    if (arrow == std::string_view::npos) {
      throw GrammarError(grammar_line_error(line_no, "expected 'Element(...) -> NT'"));
    }
    SyntacticElement el;
    el.produces = std::string(trim(line.substr(arrow + 2)));
    if (!is_identifier(el.produces)) {
      throw GrammarError(grammar_line_error(line_no, "bad nonterminal '" + el.produces + "'"));
    }
    auto head = trim(line.substr(0, arrow));
    if (auto open = head.find('('); open != std::string_view::npos) {
      if (head.back() != ')') throw GrammarError(grammar_line_error(line_no, "missing ')'"));
      el.name = std::string(trim(head.substr(0, open)));
      auto inner = trim(head.substr(open + 1, head.size() - open - 2));
      if (!inner.empty()) {
        for (auto part : split_commas(inner)) el.slots.push_back(parse_slot(part, line_no));
      }
    } else {
      el.name = std::string(head);
    }
    if (!is_identifier(el.name)) {
      throw GrammarError(grammar_line_error(line_no, "bad element name '" + el.name + "'"));
    }
    if (g.by_name_.count(el.name)) {
      throw GrammarError(grammar_line_error(line_no, "duplicate element '" + el.name + "'"));
    }
    g.by_name_.emplace(el.name, static_cast<int>(g.elements_.size()));
    if (std::find(g.nonterminals_.begin(), g.nonterminals_.end(), el.produces) ==
        g.nonterminals_.end()) {
      g.nonterminals_.push_back(el.produces);
    }
    g.elements_.push_back(std::move(el));
  }

  if (!start) throw GrammarError("grammar has no 'start:' line");
  g.start_ = *start;
  auto declared = [&](const std::string& nt) {
    return std::find(g.nonterminals_.begin(), g.nonterminals_.end(), nt) != g.nonterminals_.end();
  };
  if (!declared(g.start_)) {
    throw GrammarError("start symbol '" + g.start_ + "' is not produced by any element");
  }
  for (const auto& nt : g.nonterminals_) {
    if (g.by_name_.count(nt)) {
      throw GrammarError("'" + nt + "' is both an element and a nonterminal");
    }
  }

  auto producers = [&](const std::string& nt) {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(g.elements_.size()); ++i) {
      if (g.elements_[i].produces == nt) out.push_back(i);
    }
    return out;
  };

  g.start_choices_ = producers(g.start_);
  for (const auto& el : g.elements_) {
    std::vector<std::vector<int>> per_slot;
    for (const auto& slot : el.slots) {
      if (!declared(slot.nonterminal)) {
        throw GrammarError("element '" + el.name + "' uses undeclared nonterminal '" +
                           slot.nonterminal + "'");
      }
      if (slot.restrict_to) {
        auto it = g.by_name_.find(*slot.restrict_to);
        if (it == g.by_name_.end() || g.elements_[it->second].produces != slot.nonterminal) {
          throw GrammarError("element '" + el.name + "': restriction '" + *slot.restrict_to +
                             "' does not produce '" + slot.nonterminal + "'");
        }
        per_slot.push_back({it->second});
      } else {
        per_slot.push_back(producers(slot.nonterminal));
      }
    }
    bool ambiguous = false;
    for (std::size_t a = 0; a < el.slots.size(); ++a) {
      for (std::size_t b = a + 1; b < el.slots.size(); ++b) {
        if (el.slots[a].kind != SlotKind::kList || el.slots[b].kind != SlotKind::kList) continue;
        for (int x : per_slot[a]) {
          if (std::find(per_slot[b].begin(), per_slot[b].end(), x) != per_slot[b].end()) {
            ambiguous = true;
          }
        }
      }
    }
    g.slot_choices_.push_back(std::move(per_slot));
    g.ambiguous_.push_back(ambiguous);
  }
  return g;
}

const Grammar& Grammar::minipy() {
  static const Grammar g = Grammar::parse(kMinipy);
  return g;
}

std::string_view Grammar::minipy_text() { return kMinipy; }

std::optional<int> Grammar::find(std::string_view element) const {
  auto it = by_name_.find(std::string(element));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

int Grammar::index_of(std::string_view element) const {
  auto idx = find(element);
  if (!idx) throw GrammarError("unknown element '" + std::string(element) + "'");
  return *idx;
}

bool Grammar::admits(int element, int slot, int child) const {
  const auto& choices = slot_choices_[element][slot];
  return std::find(choices.begin(), choices.end(), child) != choices.end();
}

std::string Grammar::text() const {
  std::ostringstream out;
  out << "start: " << start_ << "\n";
  for (const auto& el : elements_) {
    out << el.name;
    if (!el.slots.empty()) {
      out << "(";
      for (std::size_t k = 0; k < el.slots.size(); ++k) {
        const auto& s = el.slots[k];
        if (k) out << ", ";
        out << s.nonterminal;
        if (s.kind == SlotKind::kList) out << "*";
        if (s.restrict_to) out << "[" << *s.restrict_to << "]";
      }
      out << ")";
    }
    out << " -> " << el.produces << "\n";
  }
  return out.str();
}

std::uint64_t Grammar::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

void validate_node(const Grammar& g, const Tree& t, const std::string& path,
                   std::vector<Violation>& out) {
  auto idx = g.find(t.label);
  if (!idx) {
    out.push_back({path, "unknown element '" + t.label + "'"});
    return;
  }
  const auto& el = g.element(*idx);
  if (t.groups.size() != el.slots.size()) {
    out.push_back({path, el.name + " expects " + std::to_string(el.slots.size()) +
                             " slot group(s), found " + std::to_string(t.groups.size())});
    return;
  }
  int position = 0;
  for (std::size_t k = 0; k < el.slots.size(); ++k) {
    const auto& slot = el.slots[k];
    const auto& group = t.groups[k];
    if (slot.kind == SlotKind::kSingle && group.size() != 1) {
      out.push_back({path, el.name + " slot " + std::to_string(k) + " must hold exactly one " +
                               slot.nonterminal + ", found " + std::to_string(group.size())});
    }
    for (const auto& child : group) {
      std::string child_path = path + "/" + std::to_string(position++);
      auto cidx = g.find(child.label);
      if (cidx && !g.admits(*idx, static_cast<int>(k), *cidx)) {
        std::string want = slot.restrict_to ? *slot.restrict_to : slot.nonterminal;
        out.push_back({child_path, child.label + " is not admissible in " + el.name + " slot " +
                                       std::to_string(k) + " (expects " + want + ")"});
      }
      validate_node(g, child, child_path, out);
    }
  }
}

}  // namespace

std::vector<Violation> validate_subtree(const Grammar& g, const Tree& t) {
  std::vector<Violation> out;
  validate_node(g, t, "", out);
  return out;
}

std::vector<Violation> validate(const Grammar& g, const Tree& t) {
  std::vector<Violation> out;
  if (auto idx = g.find(t.label); idx && g.element(*idx).produces != g.start()) {
    out.push_back({"", "root " + t.label + " does not produce start symbol " + g.start()});
  }
  validate_node(g, t, "", out);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void write_tree(const Grammar& g, const Tree& t, std::string& out) {
  out += t.label;
  bool any_child = std::any_of(t.groups.begin(), t.groups.end(),
                               [](const auto& group) { return !group.empty(); });
  auto idx = g.find(t.label);
  bool bracket = idx && g.has_ambiguous_lists(*idx);
  if (!any_child) return;
  out += '(';
  bool first = true;
  for (std::size_t k = 0; k < t.groups.size(); ++k) {
    bool is_list = idx && k < g.element(*idx).slots.size() &&
                   g.element(*idx).slots[k].kind == SlotKind::kList;
    if (bracket && is_list) {
      if (!first) out += ", ";
      first = false;
      out += '[';
      for (std::size_t i = 0; i < t.groups[k].size(); ++i) {
        if (i) out += ", ";
        write_tree(g, t.groups[k][i], out);
      }
      out += ']';
      continue;
    }
    for (const auto& child : t.groups[k]) {
      if (!first) out += ", ";
      first = false;
      write_tree(g, child, out);
    }
  }
  out += ')';
}

class TreeReader {
 public:
  TreeReader(const Grammar& g, std::string_view text) : g_(g), text_(text) {}

  Tree read_root() {
    Tree t = read_node();
    skip_space();
    if (pos_ != text_.size()) fail("unexpected trailing text");
    return t;
  }

 private:
  // One parenthesized item: either a subtree or a bracketed list group.
  struct Item {
    bool is_group = false;
    std::vector<Tree> trees;
    int element = -1;  // element index when !is_group
  };

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(what + " at offset " + std::to_string(pos_));
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  std::string read_identifier() {
    skip_space();
    std::size_t begin = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
    }
    if (begin == pos_) fail("expected element name");
    return std::string(text_.substr(begin, pos_ - begin));
  }

  Tree read_node() {
    std::size_t label_pos = pos_;
    std::string label = read_identifier();
    auto idx = g_.find(label);
    if (!idx) {
      pos_ = label_pos;
      fail("unknown element '" + label + "'");
    }
    std::vector<Item> items;
    if (accept('(')) {
      if (!accept(')')) {
        do {
          items.push_back(read_item());
        } while (accept(','));
        expect(')');
      }
    }
    Tree t(label);
    t.groups.resize(g_.element(*idx).slots.size());
    if (!assign(*idx, items, 0, 0, t.groups)) {
      fail("children do not match the signature of " + label);
    }
    return t;
  }

  Item read_item() {
    Item item;
    if (accept('[')) {
      item.is_group = true;
      if (!accept(']')) {
        do {
          item.trees.push_back(read_node());
        } while (accept(','));
        expect(']');
      }
      return item;
    }
    item.trees.push_back(read_node());
    item.element = g_.index_of(item.trees.back().label);
    return item;
  }

  // Backtracking assignment of items to slots; list slots try the longest
  // run of admissible unbracketed items first.
  bool assign(int element, const std::vector<Item>& items, std::size_t i, std::size_t k,
              std::vector<std::vector<Tree>>& groups) {
    const auto& slots = g_.element(element).slots;
    if (k == slots.size()) return i == items.size();
    if (slots[k].kind == SlotKind::kSingle) {
      if (i >= items.size() || items[i].is_group) return false;
      if (!g_.admits(element, static_cast<int>(k), items[i].element)) return false;
      groups[k] = {items[i].trees.front()};
      return assign(element, items, i + 1, k + 1, groups);
    }
    if (i < items.size() && items[i].is_group) {
      for (const auto& t : items[i].trees) {
        if (!g_.admits(element, static_cast<int>(k), g_.index_of(t.label))) return false;
      }
      groups[k] = items[i].trees;
      return assign(element, items, i + 1, k + 1, groups);
    }
    std::size_t run = 0;
    while (i + run < items.size() && !items[i + run].is_group &&
           g_.admits(element, static_cast<int>(k), items[i + run].element)) {
      ++run;
    }
    for (std::size_t take = run + 1; take-- > 0;) {
      groups[k].clear();
      for (std::size_t j = 0; j < take; ++j) groups[k].push_back(items[i + j].trees.front());
      if (assign(element, items, i + take, k + 1, groups)) return true;
    }
    groups[k].clear();
    return false;
  }

  const Grammar& g_;
  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_tree(const Grammar& g, const Tree& t) {
  std::string out;
  write_tree(g, t, out);
  return out;
}

Tree parse_tree(const Grammar& g, std::string_view text) { return TreeReader(g, text).read_root(); }

namespace {

// Fixed point of cost(e) = 1 + combine over single slots of the cheapest choice.
template <typename Combine>
std::vector<double> completion_costs(const Grammar& g, Combine combine) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> cost(g.size(), inf);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t e = 0; e < g.size(); ++e) {
      const auto& el = g.element(static_cast<int>(e));
      double c = 0.0;
      for (std::size_t k = 0; k < el.slots.size(); ++k) {
        if (el.slots[k].kind == SlotKind::kList) continue;
        double best = inf;
        for (int ch : g.slot_choices(static_cast<int>(e), static_cast<int>(k))) best = std::min(best, cost[ch]);
        c = combine(c, best);
      }
      if (1.0 + c < cost[e]) {
        cost[e] = 1.0 + c;
        changed = true;
      }
    }
  }
  return cost;
}

Tree complete(const Grammar& g, const std::vector<double>& size, const std::vector<int>& choices) {
  int best = -1;
  for (int c : choices) {
    if (best < 0 || size[c] < size[best]) best = c;
  }
  if (best < 0 || !std::isfinite(size[best])) throw GrammarError("no finite completion");
  const auto& el = g.element(best);
  Tree t(el.name);
  t.groups.resize(el.slots.size());
  for (std::size_t k = 0; k < el.slots.size(); ++k) {
    if (el.slots[k].kind == SlotKind::kSingle) {
      t.groups[k].push_back(complete(g, size, g.slot_choices(best, static_cast<int>(k))));
    }
  }
  return t;
}

}  // namespace

std::vector<double> min_completion_sizes(const Grammar& g) {
  return completion_costs(g, [](double acc, double c) { return acc + c; });
}

std::vector<double> min_completion_depths(const Grammar& g) {
  return completion_costs(g, [](double acc, double c) { return std::max(acc, c); });
}

Tree minimal_completion(const Grammar& g, const std::vector<int>& choices) {
  return complete(g, min_completion_sizes(g), choices);
}

}  // namespace treecode
