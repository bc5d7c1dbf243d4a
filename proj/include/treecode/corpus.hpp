#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "treecode/grammar.hpp"
#include "treecode/numerics.hpp"

namespace treecode {

struct TraceStep {
  std::int64_t ts = 0;
  Tree tree;
};

// One student's submissions for one task, ordered by timestamp.
struct Trace {
  std::string student;
  std::string task;
  std::vector<TraceStep> steps;
};

struct TraceLoadReport {
  std::size_t lines = 0;      // non-blank lines
  std::size_t malformed = 0;  // bad JSON or missing keys
  std::size_t loaded = 0;     // well-formed records
  std::size_t parsed = 0;     // records whose payload became a valid tree
  std::size_t skipped = 0;    // loaded − parsed
  std::vector<std::string> messages;
};

// Reads JSONL records {student, task, ts, source|tree}. Bad lines and
// unparseable payloads are counted and skipped; throws DataError when no
// record is usable. Source payloads go through the minipy frontend.
std::vector<Trace> load_traces(const Grammar& g, const std::string& path, TraceLoadReport* report = nullptr);
std::string traces_to_jsonl(const Grammar& g, const std::vector<Trace>& traces);

struct Corpus {
  std::vector<Tree> trees;
  std::size_t loaded = 0;
  std::size_t skipped = 0;
  std::size_t deduplicated = 0;
};

// Keeps the first occurrence of each serialized form.
Corpus unique_trees(const Grammar& g, std::vector<Tree> trees);

// A directory of *.py / *.tree files, a JSONL trace file, or a text file with
// one serialized tree per line. Invalid entries are skipped and counted.
Corpus load_corpus(const Grammar& g, const std::string& path);

struct Split {
  std::vector<Trace> train;
  std::vector<Trace> test;
};

// Students are ordered by a seeded hash of their id and dealt round-robin
// into folds. With `train_students` set, each split's training side keeps
// only that many students (seeded choice). Throws DataError when there are
// fewer students than folds.
std::vector<Split> kfold_by_student(const std::vector<Trace>& traces, std::size_t folds, std::uint64_t seed,
                                    std::optional<std::size_t> train_students = std::nullopt);

// Random top-down derivations within `max_depth` levels; list lengths are
// geometric(1/2) capped at `max_list`. Returns up to `count` distinct trees
// from at most 10·count attempts.
Corpus synth_corpus(const Grammar& g, std::uint64_t seed, std::size_t count, std::size_t max_depth,
                    std::size_t max_list);

// Breadth-first growth prefixes of a tree: prefix k reveals the first k
// nodes, truncates lists to their revealed elements and fills unrevealed
// single slots with minimal completions. Consecutive duplicates are dropped;
// the last element is the tree itself.
std::vector<Tree> growth_prefixes(const Grammar& g, const Tree& target);

// A valid tree with exactly `size` nodes, grown from the minimal start
// tree by random list insertions and leaf expansions. Lists stay within
// `max_list`. Throws DataError when no such tree is reached.
Tree sized_tree(const Grammar& g, Rng& rng, std::size_t size, std::size_t max_list = 4);

struct SynthTraceOptions {
  std::size_t max_depth = 5;
  std::size_t max_list = 3;
  std::string task = "synth";
};

// One trace per student: `steps` growth prefixes of a random target, ending
// at the target. Every tree that occurs before the end of some trace has
// the same successor in all traces.
std::vector<Trace> synth_traces(const Grammar& g, std::uint64_t seed, std::size_t students, std::size_t steps,
                                const SynthTraceOptions& options = {});

}  // namespace treecode
