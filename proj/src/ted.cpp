#include "treecode/ted.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

#include "treecode/error.hpp"

namespace treecode {

namespace {

std::size_t flatten(const Tree& t, FlatTree& out) {
  std::size_t leftmost = out.labels.size();
  bool first = true;
  for (const auto& group : t.groups) {
    for (const auto& child : group) {
      std::size_t child_leftmost = flatten(child, out);
      if (first) leftmost = child_leftmost;
      first = false;
    }
  }
  out.labels.push_back(t.label);
  out.leftmost.push_back(leftmost);
  return leftmost;
}

}  // namespace

FlatTree FlatTree::from(const Tree& t) {
  FlatTree f;
  flatten(t, f);
  // A keyroot is the highest node sharing its leftmost leaf.
  std::map<std::size_t, std::size_t> highest;
  for (std::size_t i = 0; i < f.size(); ++i) highest[f.leftmost[i]] = i;
  for (const auto& [lmd, node] : highest) f.keyroots.push_back(node);
  std::sort(f.keyroots.begin(), f.keyroots.end());
  return f;
}

std::size_t ted(const FlatTree& a, const FlatTree& b) {
  const std::size_t n1 = a.size(), n2 = b.size();
  if (n1 == 0 || n2 == 0) return n1 + n2;

  std::unordered_map<std::string, int> ids;
  auto intern = [&](const std::vector<std::string>& labels) {
    std::vector<int> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(ids.emplace(l, static_cast<int>(ids.size())).first->second);
    return out;
  };
  const std::vector<int> la = intern(a.labels), lb = intern(b.labels);

  std::vector<std::size_t> treedist(n1 * n2, 0);
  std::vector<std::size_t> forest;
  for (std::size_t i : a.keyroots) {
    for (std::size_t j : b.keyroots) {
      const std::size_t li = a.leftmost[i], lj = b.leftmost[j];
      const std::size_t rows = i - li + 2, cols = j - lj + 2;
      forest.assign(rows * cols, 0);
      auto fd = [&](std::size_t x, std::size_t y) -> std::size_t& { return forest[x * cols + y]; };
      for (std::size_t x = 1; x < rows; ++x) fd(x, 0) = fd(x - 1, 0) + 1;
      for (std::size_t y = 1; y < cols; ++y) fd(0, y) = fd(0, y - 1) + 1;
      for (std::size_t x = 1; x < rows; ++x) {
        const std::size_t i1 = li + x - 1;
        for (std::size_t y = 1; y < cols; ++y) {
          const std::size_t j1 = lj + y - 1;
          const std::size_t del = fd(x - 1, y) + 1;
          const std::size_t ins = fd(x, y - 1) + 1;
          if (a.leftmost[i1] == li && b.leftmost[j1] == lj) {
            const std::size_t rel = fd(x - 1, y - 1) + (la[i1] == lb[j1] ? 0 : 1);
            fd(x, y) = std::min({del, ins, rel});
            treedist[i1 * n2 + j1] = fd(x, y);
          } else {
            const std::size_t p = a.leftmost[i1] - li, q = b.leftmost[j1] - lj;
            fd(x, y) = std::min({del, ins, fd(p, q) + treedist[i1 * n2 + j1]});
          }
        }
      }
    }
  }
  return treedist[(n1 - 1) * n2 + (n2 - 1)];
}

std::size_t ted(const Tree& a, const Tree& b) { return ted(FlatTree::from(a), FlatTree::from(b)); }

// ---------------------------------------------------------------------------

namespace {

using Forest = std::vector<const Tree*>;

void key_of(const Tree& t, std::string& out) {
  out += t.label;
  out += '(';
  for (const Tree* c : t.children()) key_of(*c, out);
  out += ')';
}

std::string key_of(const Forest& f) {
  std::string out;
  for (const Tree* t : f) key_of(*t, out);
  return out;
}

std::size_t forest_size(const Forest& f) {
  std::size_t n = 0;
  for (const Tree* t : f) n += tree_size(*t);
  return n;
}

class ForestDistance {
 public:
  std::size_t operator()(const Forest& f, const Forest& g) {
    if (f.empty()) return forest_size(g);
    if (g.empty()) return forest_size(f);
    std::string key = key_of(f) + "|" + key_of(g);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;

    const Tree& v = *f.back();
    const Tree& w = *g.back();
    Forest f_rest(f.begin(), f.end() - 1), g_rest(g.begin(), g.end() - 1);
    Forest v_kids = v.children(), w_kids = w.children();
    Forest f_minus_v = f_rest, g_minus_w = g_rest;
    f_minus_v.insert(f_minus_v.end(), v_kids.begin(), v_kids.end());
    g_minus_w.insert(g_minus_w.end(), w_kids.begin(), w_kids.end());

    std::size_t best = (*this)(f_minus_v, g) + 1;
    best = std::min(best, (*this)(f, g_minus_w) + 1);
    best = std::min(best, (*this)(v_kids, w_kids) + (*this)(f_rest, g_rest) +
                              (v.label == w.label ? 0 : 1));
    memo_.emplace(std::move(key), best);
    return best;
  }

 private:
  std::unordered_map<std::string, std::size_t> memo_;
};

}  // namespace

std::size_t ted_oracle(const Tree& a, const Tree& b) {
  if (tree_size(a) + tree_size(b) > 12) {
    throw DataError("ted_oracle: combined tree size exceeds 12");
  }
  return ForestDistance()({&a}, {&b});
}

}  // namespace treecode
