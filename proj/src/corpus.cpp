#include "treecode/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "treecode/error.hpp"
#include "treecode/frontend.hpp"
#include "treecode/io.hpp"
#include "treecode/numerics.hpp"

namespace treecode {

namespace {

using json = nlohmann::ordered_json;

std::optional<Tree> parse_payload(const Grammar& g, const json& rec, std::string& why) {
  try {
    Tree t = rec.contains("source") ? parse_program({rec.at("source").get<std::string>(), std::nullopt})
                                    : parse_tree(g, rec.at("tree").get<std::string>());
    auto v = validate(g, t);
    if (!v.empty()) {
      why = "grammar violation at '" + v.front().path + "': " + v.front().message;
      return std::nullopt;
    }
    return t;
  } catch (const std::exception& e) {
    why = e.what();
    return std::nullopt;
  }
}

std::string student_field(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw DataError("student/task must be a string or integer");
}

}  // namespace

std::vector<Trace> load_traces(const Grammar& g, const std::string& path, TraceLoadReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  TraceLoadReport local;
  TraceLoadReport& r = report ? *report : local;
  r = TraceLoadReport{};

  std::vector<Trace> traces;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++r.lines;
    std::string student, task;
    std::int64_t ts = 0;
    json rec;
    try {
      rec = json::parse(line);
      if (!rec.is_object()) throw DataError("not a JSON object");
      student = student_field(rec.at("student"));
      task = student_field(rec.at("task"));
      ts = rec.at("ts").get<std::int64_t>();
      if (rec.contains("source") == rec.contains("tree")) throw DataError("need exactly one of source, tree");
    } catch (const std::exception& e) {
      ++r.malformed;
      r.messages.push_back(path + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
      continue;
    }
    ++r.loaded;
    std::string why;
    auto tree = parse_payload(g, rec, why);
    if (!tree) {
      ++r.skipped;
      r.messages.push_back(path + ":" + std::to_string(line_no) + ": skipped: " + why);
      continue;
    }
    ++r.parsed;
    auto key = std::make_pair(student, task);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, traces.size()).first;
      traces.push_back(Trace{student, task, {}});
    }
    traces[it->second].steps.push_back(TraceStep{ts, std::move(*tree)});
  }
  if (r.parsed == 0) throw DataError(path + ": no usable trace records");
  for (auto& t : traces) {
    std::stable_sort(t.steps.begin(), t.steps.end(),
                     [](const TraceStep& a, const TraceStep& b) { return a.ts < b.ts; });
  }
  return traces;
}

std::string traces_to_jsonl(const Grammar& g, const std::vector<Trace>& traces) {
  std::string out;
  for (const auto& t : traces) {
    for (const auto& s : t.steps) {
      json rec;
      rec["student"] = t.student;
      rec["task"] = t.task;
      rec["ts"] = s.ts;
      rec["tree"] = serialize_tree(g, s.tree);
      out += rec.dump();
      out += '\n';
    }
  }
  return out;
}

Corpus unique_trees(const Grammar& g, std::vector<Tree> trees) {
  Corpus c;
  c.loaded = trees.size();
  std::unordered_set<std::string> seen;
  for (auto& t : trees) {
    if (seen.insert(serialize_tree(g, t)).second) c.trees.push_back(std::move(t));
  }
  c.deduplicated = c.loaded - c.trees.size();
  return c;
}

Corpus load_corpus(const Grammar& g, const std::string& path) {
  namespace fs = std::filesystem;
  std::vector<Tree> trees;
  std::size_t skipped = 0;
  auto accept = [&](std::optional<Tree> t) {
    if (t && validate(g, *t).empty()) {
      trees.push_back(std::move(*t));
    } else {
      ++skipped;
    }
  };
  auto try_parse = [&](auto fn) -> std::optional<Tree> {
    try {
      return fn();
    } catch (const std::exception&) {
      return std::nullopt;
    }
  };

  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string ext = f.extension().string();
      if (ext == ".py") {
        std::string text = read_file(f.string());
        accept(try_parse([&] { return parse_program({text, f.string()}); }));
      } else if (ext == ".tree") {
        std::string text = read_file(f.string());
        accept(try_parse([&] { return parse_tree(g, text); }));
      }
    }
  } else if (fs::path(path).extension() == ".jsonl") {
    TraceLoadReport rep;
    for (auto& t : load_traces(g, path, &rep)) {
      for (auto& s : t.steps) trees.push_back(std::move(s.tree));
    }
    skipped = rep.skipped + rep.malformed;
  } else {
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      accept(try_parse([&] { return parse_tree(g, line); }));
    }
  }
  if (trees.empty()) throw DataError(path + ": no usable trees");
  Corpus c = unique_trees(g, std::move(trees));
  c.loaded += skipped;
  c.skipped = skipped;
  return c;
}

std::vector<Split> kfold_by_student(const std::vector<Trace>& traces, std::size_t folds, std::uint64_t seed,
                                    std::optional<std::size_t> train_students) {
  if (folds < 2) throw DataError("kfold_by_student: folds must be >= 2");
  std::vector<std::string> students;
  for (const auto& t : traces) {
    if (std::find(students.begin(), students.end(), t.student) == students.end()) students.push_back(t.student);
  }
  if (students.size() < folds) {
    throw DataError("kfold_by_student: " + std::to_string(students.size()) + " students for " +
                    std::to_string(folds) + " folds");
  }
  auto key = [&](const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
    return Rng(seed ^ h).next_u64();
  };
  std::vector<std::pair<std::uint64_t, std::string>> order;
  for (const auto& s : students) order.emplace_back(key(s), s);
  std::sort(order.begin(), order.end());
  std::unordered_map<std::string, std::size_t> fold_of;
  for (std::size_t i = 0; i < order.size(); ++i) fold_of[order[i].second] = i % folds;

  std::vector<Split> splits(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::string> train_ids;
    for (const auto& [k, s] : order) {
      if (fold_of[s] != f) train_ids.push_back(s);
    }
    if (train_students && *train_students < train_ids.size()) {
      Rng rng(seed + 0x9E3779B97F4A7C15ull * (f + 1));
      for (std::size_t i = train_ids.size(); i > 1; --i) std::swap(train_ids[i - 1], train_ids[rng.uniform_index(i)]);
      train_ids.resize(*train_students);
    }
    std::unordered_set<std::string> keep(train_ids.begin(), train_ids.end());
    for (const auto& t : traces) {
      if (fold_of[t.student] == f) {
        splits[f].test.push_back(t);
      } else if (keep.count(t.student)) {
        splits[f].train.push_back(t);
      }
    }
  }
  return splits;
}

// ---------------------------------------------------------------------------

namespace {

class Generator {
 public:
  Generator(const Grammar& g, std::uint64_t seed, std::size_t max_depth, std::size_t max_list)
      : g_(g), rng_(seed), max_depth_(max_depth), max_list_(max_list), depth_(min_completion_depths(g)) {
    if (!fits(g_.start_choices(), max_depth_)) {
      throw GrammarError("no finite derivation within max_depth " + std::to_string(max_depth));
    }
  }

  Tree draw() { return node(g_.start_choices(), max_depth_); }

 private:
  bool fits(const std::vector<int>& choices, std::size_t budget) const {
    for (int c : choices) {
      if (depth_[c] <= static_cast<double>(budget)) return true;
    }
    return false;
  }

  Tree node(const std::vector<int>& choices, std::size_t budget) {
    std::vector<int> eligible;
    for (int c : choices) {
      if (depth_[c] <= static_cast<double>(budget)) eligible.push_back(c);
    }
    const int e = eligible[rng_.uniform_index(eligible.size())];
    const auto& el = g_.element(e);
    Tree t(el.name);
    t.groups.resize(el.slots.size());
    for (std::size_t k = 0; k < el.slots.size(); ++k) {
      const auto& sch = g_.slot_choices(e, static_cast<int>(k));
      if (el.slots[k].kind == SlotKind::kSingle) {
        t.groups[k].push_back(node(sch, budget - 1));
        continue;
      }
      if (budget < 2 || !fits(sch, budget - 1)) continue;
      std::size_t len = 0;
      while (len < max_list_ && rng_.uniform() < 0.5) ++len;
      for (std::size_t i = 0; i < len; ++i) t.groups[k].push_back(node(sch, budget - 1));
    }
    return t;
  }

  const Grammar& g_;
  Rng rng_;
  std::size_t max_depth_;
  std::size_t max_list_;
  std::vector<double> depth_;
};

}  // namespace

Corpus synth_corpus(const Grammar& g, std::uint64_t seed, std::size_t count, std::size_t max_depth,
                    std::size_t max_list) {
  if (count < 1) throw DataError("synth_corpus: count must be >= 1");
  Generator gen(g, seed, max_depth, max_list);
  Corpus c;
  std::unordered_set<std::string> seen;
  for (std::size_t attempt = 0; attempt < 10 * count && c.trees.size() < count; ++attempt) {
    Tree t = gen.draw();
    ++c.loaded;
    if (seen.insert(serialize_tree(g, t)).second) {
      c.trees.push_back(std::move(t));
    } else {
      ++c.deduplicated;
    }
  }
  return c;
}

std::vector<Tree> growth_prefixes(const Grammar& g, const Tree& target) {
  std::unordered_map<const Tree*, std::size_t> rank;
  std::vector<const Tree*> queue{&target};
  for (std::size_t i = 0; i < queue.size(); ++i) {
    rank[queue[i]] = i;
    for (const Tree* c : queue[i]->children()) queue.push_back(c);
  }
  auto filler = [&](int element, std::size_t slot) {
    return minimal_completion(g, g.slot_choices(element, static_cast<int>(slot)));
  };
  auto build = [&](auto& self, const Tree& t, std::size_t k) -> Tree {
    const int e = g.index_of(t.label);
    Tree out(t.label);
    out.groups.resize(t.groups.size());
    for (std::size_t s = 0; s < t.groups.size(); ++s) {
      const bool single = g.element(e).slots[s].kind == SlotKind::kSingle;
      for (const Tree& c : t.groups[s]) {
        if (rank.at(&c) < k) {
          out.groups[s].push_back(self(self, c, k));
        } else if (single) {
          out.groups[s].push_back(filler(e, s));
        }
      }
    }
    return out;
  };
  std::vector<Tree> out;
  for (std::size_t k = 1; k <= queue.size(); ++k) {
    Tree p = build(build, target, k);
    if (out.empty() || !(out.back() == p)) out.push_back(std::move(p));
  }
  return out;
}

Tree sized_tree(const Grammar& g, Rng& rng, std::size_t size, std::size_t max_list) {
  const std::vector<double> min_size = min_completion_sizes(g);
  struct Action {
    Tree* node;      // list owner, or the leaf to replace
    std::size_t slot;
    int element;     // element to insert / expand into
    bool insert;
  };
  for (int restart = 0; restart < 1000; ++restart) {
    Tree t = minimal_completion(g, g.start_choices());
    for (std::size_t current = tree_size(t); current != size;) {
      if (current > size) break;
      const double remaining = static_cast<double>(size - current);
      std::vector<Action> actions;
      auto collect = [&](auto& self, Tree& node) -> void {
        const int e = g.index_of(node.label);
        const auto& el = g.element(e);
        for (std::size_t k = 0; k < el.slots.size(); ++k) {
          const auto& sch = g.slot_choices(e, static_cast<int>(k));
          if (el.slots[k].kind == SlotKind::kList) {
            if (node.groups[k].size() < max_list) {
              for (int c : sch) {
                if (min_size[c] <= remaining) actions.push_back({&node, k, c, true});
              }
            }
          } else if (tree_size(node.groups[k][0]) == 1) {
            for (int c : sch) {
              if (min_size[c] > 1 && min_size[c] - 1 <= remaining) actions.push_back({&node, k, c, false});
            }
          }
          for (Tree& child : node.groups[k]) self(self, child);
        }
      };
      collect(collect, t);
      if (actions.empty()) break;
      const Action& a = actions[rng.uniform_index(actions.size())];
      Tree grown = minimal_completion(g, {a.element});
      auto& group = a.node->groups[a.slot];
      if (a.insert) {
        group.insert(group.begin() + static_cast<std::ptrdiff_t>(rng.uniform_index(group.size() + 1)), std::move(grown));
      } else {
        group[0] = std::move(grown);
      }
      current = tree_size(t);
    }
    if (tree_size(t) == size) return t;
  }
  throw DataError("sized_tree: could not build a tree of size " + std::to_string(size));
}

std::vector<Trace> synth_traces(const Grammar& g, std::uint64_t seed, std::size_t students, std::size_t steps,
                                const SynthTraceOptions& options) {
  if (steps < 2) throw DataError("synth_traces: steps must be >= 2");
  Generator gen(g, seed, options.max_depth, options.max_list);
  Rng pick(seed ^ 0x5851F42D4C957F2Dull);
  std::unordered_map<std::string, std::string> successor;
  std::vector<Trace> traces;
  for (std::size_t s = 0; s < students; ++s) {
    bool done = false;
    for (int attempt = 0; attempt < 10000 && !done; ++attempt) {
      std::vector<Tree> chain = growth_prefixes(g, gen.draw());
      if (chain.size() < steps) continue;
      const std::size_t m = chain.size() - 1;
      const std::size_t s0 = pick.uniform_index(m + 2 - steps);
      std::vector<std::string> keys;
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < steps; ++i) {
        idx.push_back(s0 + (i * (m - s0) + (steps - 1) / 2) / (steps - 1));
        keys.push_back(serialize_tree(g, chain[idx.back()]));
      }
      bool consistent = true;
      for (std::size_t i = 0; i + 1 < steps && consistent; ++i) {
        auto it = successor.find(keys[i]);
        consistent = it == successor.end() || it->second == keys[i + 1];
      }
      if (!consistent) continue;
      for (std::size_t i = 0; i + 1 < steps; ++i) successor.emplace(keys[i], keys[i + 1]);
      Trace t;
      char id[32];
      std::snprintf(id, sizeof id, "s%03zu", s);
      t.student = id;
      t.task = options.task;
      for (std::size_t i = 0; i < steps; ++i) t.steps.push_back(TraceStep{static_cast<std::int64_t>(60 * i), chain[idx[i]]});
      traces.push_back(std::move(t));
      done = true;
    }
    if (!done) throw DataError("synth_traces: could not draw a consistent trace");
  }
  return traces;
}

}  // namespace treecode
