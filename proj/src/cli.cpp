#include "treecode/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <iterator>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "treecode/analysis.hpp"
#include "treecode/autoencoder.hpp"
#include "treecode/corpus.hpp"
#include "treecode/error.hpp"
#include "treecode/frontend.hpp"
#include "treecode/io.hpp"
#include "treecode/ted.hpp"

namespace treecode {

namespace {

using json = nlohmann::json;

// TOML via CLI11, or a JSON object whose nested objects name subcommands.
// Keys may use '_' or '-'.
class JsonOrTomlConfig : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<CLI::ConfigItem> items;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      json j;
      try {
        j = json::parse(text);
      } catch (const json::exception& e) {
        throw CLI::ConversionError("config", e.what());
      }
      flatten(j, {}, items);
    } else {
      std::istringstream ss(text);
      items = CLI::ConfigTOML::from_config(ss);
    }
    for (auto& item : items) std::replace(item.name.begin(), item.name.end(), '_', '-');
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  }

  static void flatten(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }
};

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string vec_csv(const Vec& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += fmt(v[i]);
  }
  return s;
}

Vec parse_vec(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (cell.find_first_not_of(" \t\r\n", used) != std::string::npos) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw DataError("not a number: '" + cell + "'");
    }
  }
  if (out.empty()) throw DataError("empty vector");
  return Vec(std::move(out));
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

struct Globals {
  std::string grammar = "builtin";
  std::uint64_t seed = 0;
};

class Context {
 public:
  Context(const Globals& g, std::ostream& out, std::ostream& err) : globals_(g), out_(out), err_(err) {}

  const Grammar& grammar() {
    if (!grammar_) {
      grammar_ = globals_.grammar == "builtin" ? Grammar::minipy() : Grammar::parse(read_file(globals_.grammar));
    }
    return *grammar_;
  }
  std::uint64_t seed() const { return globals_.seed; }
  std::ostream& out() { return out_; }
  std::ostream& err() { return err_; }

  Model model(const std::string& path) {
    Model m = load_model(path);
    if (globals_.grammar != "builtin") require_grammar(m, grammar());
    return m;
  }

  // A tree file, a .py file, inline tree text, or inline source.
  Tree tree_arg(const Grammar& g, const std::string& arg) {
    Tree t;
    if (std::filesystem::is_regular_file(arg)) {
      const std::string text = read_file(arg);
      t = std::filesystem::path(arg).extension() == ".py" ? parse_program({text, arg}) : parse_tree(g, text);
    } else {
      try {
        t = parse_tree(g, arg);
      } catch (const ParseError&) {
        t = parse_program({arg, std::nullopt});
      }
    }
    auto v = validate(g, t);
    if (!v.empty()) throw DataError(arg + ": " + v.front().path + ": " + v.front().message);
    return t;
  }

  void emit(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
      out_ << content;
    } else {
      write_file_atomic(path, content);
    }
  }

 private:
  const Globals& globals_;
  std::ostream& out_;
  std::ostream& err_;
  std::optional<Grammar> grammar_;
};

std::vector<Tree> load_trees(Context& ctx, const Grammar& g, const std::string& path) {
  Corpus c = load_corpus(g, path);
  if (c.skipped) ctx.err() << "skipped " << c.skipped << " unusable entries in " << path << "\n";
  return std::move(c.trees);
}

// ---------------------------------------------------------------------------
// DynSys files

void save_dynsys(const DynSys& ds, const std::string& path) {
  json j;
  j["format"] = "treecode-dynsys";
  j["version"] = 1;
  j["lambda"] = ds.lambda;
  json w = json::array();
  for (std::size_t i = 0; i < ds.W.rows(); ++i) w.push_back(ds.W.row_vec(i).values());
  j["W"] = std::move(w);
  json sol = json::array();
  for (const auto& s : ds.solutions) sol.push_back(s.values());
  j["solutions"] = std::move(sol);
  write_file_atomic(path, j.dump() + "\n");
}

DynSys load_dynsys(const std::string& path) {
  try {
    json j = json::parse(read_file(path));
    if (j.value("format", "") != "treecode-dynsys" || j.value("version", 0) != 1) {
      throw DataError(path + ": not a dynsys file");
    }
    DynSys ds;
    ds.lambda = j.at("lambda").get<double>();
    std::vector<Vec> rows;
    for (const auto& r : j.at("W")) rows.emplace_back(r.get<std::vector<double>>());
    ds.W = Mat::from_rows(rows);
    for (const auto& s : j.at("solutions")) ds.solutions.emplace_back(s.get<std::vector<double>>());
    if (ds.W.rows() != ds.W.cols() || ds.solutions.empty()) throw DataError(path + ": bad shapes");
    for (const auto& s : ds.solutions) {
      if (s.size() != ds.W.rows()) throw DataError(path + ": bad shapes");
    }
    return ds;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands

struct TrainArgs {
  std::string corpus;
  std::size_t synth_count = 0;
  std::size_t synth_depth = 6;
  std::size_t synth_list = 4;
  std::string out;
  std::string loss_csv;
  std::size_t epochs = 1000;
  std::size_t log_every = 1000;
  ModelConfig config;
};

int run_train(Context& ctx, TrainArgs& a) {
  const Grammar& g = ctx.grammar();
  std::vector<Tree> corpus;
  if (!a.corpus.empty()) {
    corpus = load_trees(ctx, g, a.corpus);
  } else if (a.synth_count > 0) {
    corpus = synth_corpus(g, ctx.seed(), a.synth_count, a.synth_depth, a.synth_list).trees;
  } else {
    throw CLI::RequiredError("--corpus or --synth-count");
  }
  a.config.seed = ctx.seed();
  Model m(g, a.config);
  ctx.err() << "training on " << corpus.size() << " trees, " << m.params().size() << " parameters\n";
  TrainOptions opt;
  const auto start = std::chrono::steady_clock::now();
  opt.on_epoch = [&](std::size_t e, double l) {
    if (a.log_every && (e + 1) % a.log_every == 0) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      ctx.err() << "epoch " << e + 1 << " loss " << l << " (" << s << " s)\n";
    }
  };
  auto curve = train(m, corpus, a.epochs, opt);
  save_model(m, a.out);
  if (!a.loss_csv.empty()) {
    std::string csv = "epoch,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) csv += std::to_string(i + 1) + "," + fmt(curve[i]) + "\n";
    write_file_atomic(a.loss_csv, csv);
  }
  return 0;
}

struct EvalArgs {
  std::string model, corpus, out, timing_out;
  std::size_t timing_min = 5, timing_max = 100, timing_per_size = 10;
};

int run_eval_autoencode(Context& ctx, const EvalArgs& a) {
  Model m = ctx.model(a.model);
  const Grammar& g = m.grammar();
  auto r = eval_autoencode(m, load_trees(ctx, g, a.corpus));
  std::string csv = "size,count,mean,median,std\n";
  for (const auto& row : r.table) {
    csv += std::to_string(row.size) + "," + std::to_string(row.count) + "," + fmt(row.mean) + "," +
           fmt(row.median) + "," + fmt(row.std) + "\n";
  }
  ctx.emit(a.out, csv);
  if (!a.timing_out.empty()) {
    Rng rng(ctx.seed());
    std::string t = "size,encode_seconds,decode_seconds\n";
    for (std::size_t size = a.timing_min; size <= a.timing_max; ++size) {
      for (std::size_t i = 0; i < a.timing_per_size; ++i) {
        Tree tree = sized_tree(g, rng, size, m.config().max_list_length);
        auto t0 = std::chrono::steady_clock::now();
        Vec z = encode(m, tree);
        auto t1 = std::chrono::steady_clock::now();
        Tree d = decode(m, z);
        auto t2 = std::chrono::steady_clock::now();
        t += std::to_string(size) + "," + fmt(std::chrono::duration<double>(t1 - t0).count()) + "," +
             fmt(std::chrono::duration<double>(t2 - t1).count()) + "\n";
      }
    }
    write_file_atomic(a.timing_out, t);
  }
  return 0;
}

struct ProjArgs {
  std::string model, solution, empty = "Module", data, out;
  std::size_t rows = 11, cols = 11;
  double p_min = 0, p_max = 1, v_min = -0.5, v_max = 1;
};

ProjectionModel fit_from_args(Context& ctx, const Model& m, const ProjArgs& a, std::vector<Vec>* codes,
                              std::vector<Tree>* trees) {
  const Grammar& g = m.grammar();
  std::vector<Tree> data = load_trees(ctx, g, a.data);
  std::vector<Vec> x;
  for (const Tree& t : data) x.push_back(encode(m, t));
  ProjectionModel pm = fit_projection(x, encode(m, ctx.tree_arg(g, a.empty)), encode(m, ctx.tree_arg(g, a.solution)));
  if (codes) *codes = std::move(x);
  if (trees) *trees = std::move(data);
  return pm;
}

int run_project(Context& ctx, const ProjArgs& a) {
  Model m = ctx.model(a.model);
  std::vector<Vec> x;
  ProjectionModel pm = fit_from_args(ctx, m, a, &x, nullptr);
  std::string csv = "id,progress,variance\n";
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto [p, v] = project(pm, x[i]);
    csv += std::to_string(i) + "," + fmt(p) + "," + fmt(v) + "\n";
  }
  ctx.emit(a.out, csv);
  return 0;
}

int run_grid(Context& ctx, const ProjArgs& a) {
  if (a.rows < 1 || a.cols < 1) throw DataError("grid: rows and cols must be >= 1");
  Model m = ctx.model(a.model);
  ProjectionModel pm = fit_from_args(ctx, m, a, nullptr, nullptr);
  auto at = [](double lo, double hi, std::size_t i, std::size_t n) {
    return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  std::string csv = "progress,variance,tree\n";
  for (std::size_t r = 0; r < a.rows; ++r) {
    for (std::size_t c = 0; c < a.cols; ++c) {
      const double p = at(a.p_min, a.p_max, c, a.cols);
      const double v = at(a.v_max, a.v_min, r, a.rows);
      Tree t = decode(m, embed(pm, {p, v}));
      csv += fmt(p) + "," + fmt(v) + "," + csv_field(serialize_tree(m.grammar(), t)) + "\n";
    }
  }
  ctx.emit(a.out, csv);
  return 0;
}

struct DynArgs {
  std::string model, traces, solution, out, dynsys, start = "Module";
  double lambda = 1e-3, tol = 1e-6;
  std::size_t max_iters = 1000;
};

int run_dynsys_fit(Context& ctx, const DynArgs& a) {
  Model m = ctx.model(a.model);
  const Grammar& g = m.grammar();
  auto traces = load_traces(g, a.traces);
  std::vector<CodeTrace> codes;
  std::vector<Vec> solutions;
  for (const auto& t : traces) {
    CodeTrace ct;
    for (const auto& s : t.steps) ct.push_back(encode(m, s.tree));
    if (a.solution.empty()) solutions.push_back(ct.back());
    codes.push_back(std::move(ct));
  }
  if (!a.solution.empty()) solutions.push_back(encode(m, ctx.tree_arg(g, a.solution)));
  DynSys ds = fit_dynsys(codes, std::move(solutions), a.lambda);
  save_dynsys(ds, a.out);
  auto st = stability_check(ds);
  ctx.err() << "sufficient=" << (st.sufficient ? "true" : "false") << " norm=" << fmt(st.op_norm) << "\n";
  return 0;
}

int run_dynsys_simulate(Context& ctx, const DynArgs& a) {
  DynSys ds = load_dynsys(a.dynsys);
  Model m = ctx.model(a.model);
  Vec x0 = encode(m, ctx.tree_arg(m.grammar(), a.start));
  if (x0.size() != ds.W.rows()) throw DataError("dynsys and model dimensions differ");
  std::string csv = "step,distance,tree\n";
  auto seq = simulate(ds, x0, a.tol, a.max_iters);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const double d = norm(seq[i] - nearest_solution(ds.solutions, seq[i]));
    csv += std::to_string(i) + "," + fmt(d) + "," + csv_field(serialize_tree(m.grammar(), decode(m, seq[i]))) + "\n";
  }
  ctx.emit(a.out, csv);
  return 0;
}

int run_dynsys_check(Context& ctx, const DynArgs& a) {
  auto st = stability_check(load_dynsys(a.dynsys));
  ctx.out() << "sufficient=" << (st.sufficient ? "true" : "false") << "\n";
  ctx.out() << "norm=" << fmt(st.op_norm) << "\n";
  return 0;
}

struct ClusterArgs {
  std::string model, data, out, in;
  std::size_t k = 4;
  double var_fraction = 0.95, reg = 1e-6;
};

int run_cluster(Context& ctx, const ClusterArgs& a) {
  Model m = ctx.model(a.model);
  std::vector<Tree> trees = load_trees(ctx, m.grammar(), a.data);
  std::vector<Vec> x;
  for (const Tree& t : trees) x.push_back(encode(m, t));
  Pca pca = fit_pca(x, a.var_fraction);
  std::vector<Vec> y;
  for (const Vec& v : x) y.push_back(pca_transform(pca, v));
  GmmOptions opt;
  opt.reg = a.reg;
  GmmFit fit = fit_gmm(y, a.k, ctx.seed(), opt);
  std::vector<double> ld;
  for (const Vec& v : y) ld.push_back(gmm_logdensity(fit.model, v));
  std::vector<bool> flagged(y.size(), false);
  if (*std::min_element(ld.begin(), ld.end()) < 0) {
    for (std::size_t i : detect_outliers(ld)) flagged[i] = true;
  }
  std::string csv = "id,cluster,logdensity,outlier\n";
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto post = gmm_posterior(fit.model, y[i]);
    const auto k = std::max_element(post.begin(), post.end()) - post.begin();
    csv += std::to_string(i) + "," + std::to_string(k) + "," + fmt(ld[i]) + "," + (flagged[i] ? "1" : "0") + "\n";
  }
  ctx.emit(a.out, csv);
  ctx.err() << "pca kept " << pca.basis.size() << " components (" << fmt(pca.retained) << " of variance)\n";
  return 0;
}

int run_outliers(Context& ctx, const ClusterArgs& a) {
  std::istringstream in(read_file(a.in));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  auto col = std::find(header.begin(), header.end(), "logdensity");
  if (col == header.end()) throw DataError(a.in + ": no logdensity column");
  const std::size_t idx = static_cast<std::size_t>(col - header.begin());
  std::vector<double> ld;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t i = 0; i <= idx; ++i) {
      if (!std::getline(ss, cell, ',')) throw DataError(a.in + ": short row");
    }
    ld.push_back(parse_vec(cell)[0]);
  }
  std::string csv = "index\n";
  for (std::size_t i : detect_outliers(ld)) csv += std::to_string(i) + "\n";
  ctx.emit(a.out, csv);
  return 0;
}

struct PredictArgs {
  std::string model, traces, out, solution;
  std::size_t folds = 10, students = 30;
  double lambda = 1e-3;
  std::vector<std::string> methods{"identity", "onenn", "linear"};
  bool train_on_all = false;
};

int run_predict_eval(Context& ctx, const PredictArgs& a) {
  Model m = ctx.model(a.model);
  const Grammar& g = m.grammar();
  TraceLoadReport rep;
  auto traces = load_traces(g, a.traces, &rep);
  if (rep.skipped + rep.malformed) ctx.err() << "skipped " << rep.skipped + rep.malformed << " records\n";
  PredictOptions opt;
  opt.lambda = a.lambda;
  opt.methods.clear();
  for (const auto& name : a.methods) opt.methods.push_back(parse_method(name));
  if (!a.solution.empty()) opt.solutions.push_back(ctx.tree_arg(g, a.solution));
  PredictionReport r = a.train_on_all
                           ? predict_eval(traces, traces, m, opt)
                           : predict_eval_kfold(traces, m, a.folds, ctx.seed(),
                                                a.students ? std::optional<std::size_t>(a.students) : std::nullopt,
                                                opt);
  std::string csv = "method,task,rmse\n";
  for (PredictMethod method : opt.methods) {
    for (const auto& [key, e] : r.by_task) {
      if (key.first == method) csv += method_name(method) + "," + csv_field(key.second) + "," + fmt(e.rmse()) + "\n";
    }
  }
  ctx.emit(a.out, csv);
  return 0;
}

struct SynthArgs {
  std::size_t count = 2000, max_depth = 6, max_list = 4, students = 40, steps = 5;
  std::string out, task = "synth";
};

int run_synth_corpus(Context& ctx, const SynthArgs& a) {
  const Grammar& g = ctx.grammar();
  Corpus c = synth_corpus(g, ctx.seed(), a.count, a.max_depth, a.max_list);
  std::string text;
  for (const Tree& t : c.trees) text += serialize_tree(g, t) + "\n";
  ctx.emit(a.out, text);
  if (c.trees.size() < a.count) ctx.err() << "only " << c.trees.size() << " distinct trees found\n";
  return 0;
}

int run_synth_traces(Context& ctx, const SynthArgs& a) {
  const Grammar& g = ctx.grammar();
  SynthTraceOptions opt;
  opt.max_depth = a.max_depth;
  opt.max_list = a.max_list;
  opt.task = a.task;
  ctx.emit(a.out, traces_to_jsonl(g, synth_traces(g, ctx.seed(), a.students, a.steps, opt)));
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Grammar-guided tree autoencoder and analyses for small Python programs", "treecode"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonOrTomlConfig>());
  app.set_config("--config", "", "TOML or JSON file with option values; command-line flags win");
  app.allow_config_extras(CLI::config_extras_mode::ignore_all);

  Globals globals;
  app.add_option("--grammar", globals.grammar, "Grammar file, or 'builtin'")->capture_default_str();
  app.add_option("--seed", globals.seed, "Random seed")->envname("TREECODE_SEED")->capture_default_str();

  std::string out_path;
  std::vector<std::string> positional;

  auto* parse = app.add_subcommand("parse", "Parse a Python file and print its tree");
  parse->add_option("file", positional, "Source file")->required()->expected(1);

  auto* ted_cmd = app.add_subcommand("ted", "Tree edit distance between two trees");
  ted_cmd->add_option("trees", positional, "Two tree/source files or inline trees")->required()->expected(2);

  auto* grammar_cmd = app.add_subcommand("grammar", "Print the canonical grammar and its hash");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train an autoencoder");
  train_cmd->add_option("--corpus", ta.corpus, "Directory, JSONL traces, or tree-per-line file");
  train_cmd->add_option("--synth-count", ta.synth_count, "Train on this many synthetic trees instead");
  train_cmd->add_option("--synth-depth", ta.synth_depth)->capture_default_str();
  train_cmd->add_option("--synth-list", ta.synth_list)->capture_default_str();
  train_cmd->add_option("--out", ta.out, "Model file")->required();
  train_cmd->add_option("--loss-csv", ta.loss_csv, "Per-epoch loss curve");
  train_cmd->add_option("--epochs", ta.epochs)->capture_default_str();
  train_cmd->add_option("--log-every", ta.log_every)->capture_default_str();
  train_cmd->add_option("--latent-dim", ta.config.latent_dim)->capture_default_str();
  train_cmd->add_option("--beta", ta.config.beta)->capture_default_str();
  train_cmd->add_option("--lr", ta.config.learning_rate)->capture_default_str();
  train_cmd->add_option("--batch", ta.config.batch_size)->capture_default_str();
  train_cmd->add_option("--max-decode-nodes", ta.config.max_decode_nodes)->capture_default_str();
  train_cmd->add_option("--max-list", ta.config.max_list_length)->capture_default_str();

  std::string model_path, vec_text;
  auto* encode_cmd = app.add_subcommand("encode", "Print the code of a tree as a CSV row");
  encode_cmd->add_option("--model", model_path)->required();
  encode_cmd->add_option("input", positional, "Tree/source file or inline tree")->required()->expected(1);

  auto* decode_cmd = app.add_subcommand("decode", "Decode a CSV row into a tree");
  decode_cmd->add_option("--model", model_path)->required();
  decode_cmd->add_option("--vec", vec_text, "Comma-separated code")->required();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval-autoencode", "Autoencoding error by size, plus timings");
  eval_cmd->add_option("--model", ea.model)->required();
  eval_cmd->add_option("--corpus", ea.corpus)->required();
  eval_cmd->add_option("--out", ea.out, "Error table CSV (default stdout)");
  eval_cmd->add_option("--timing-out", ea.timing_out, "Encode/decode timing CSV");
  eval_cmd->add_option("--timing-min", ea.timing_min)->capture_default_str();
  eval_cmd->add_option("--timing-max", ea.timing_max)->capture_default_str();
  eval_cmd->add_option("--timing-per-size", ea.timing_per_size)->capture_default_str();

  ProjArgs pa;
  auto add_proj = [&](CLI::App* cmd) {
    cmd->add_option("--model", pa.model)->required();
    cmd->add_option("--solution", pa.solution, "Reference solution (tree or source)")->required();
    cmd->add_option("--empty", pa.empty, "Empty program")->capture_default_str();
    cmd->add_option("--data", pa.data, "Corpus used to pick the variance axis")->required();
    cmd->add_option("--out", pa.out, "CSV (default stdout)");
  };
  auto* project_cmd = app.add_subcommand("project", "Progress-variance coordinates of a corpus");
  add_proj(project_cmd);
  auto* grid_cmd = app.add_subcommand("grid", "Decode a lattice of 2-D points");
  add_proj(grid_cmd);
  grid_cmd->add_option("--rows", pa.rows)->capture_default_str();
  grid_cmd->add_option("--cols", pa.cols)->capture_default_str();

  DynArgs da;
  auto* dyn = app.add_subcommand("dynsys", "Linear dynamical system on codes");
  dyn->require_subcommand(1);
  auto* dyn_fit = dyn->add_subcommand("fit", "Fit W from traces");
  dyn_fit->add_option("--model", da.model)->required();
  dyn_fit->add_option("--traces", da.traces)->required();
  dyn_fit->add_option("--solution", da.solution, "Single solution; default: each trace's final tree");
  dyn_fit->add_option("--lambda", da.lambda)->capture_default_str();
  dyn_fit->add_option("--out", da.out)->required();
  auto* dyn_sim = dyn->add_subcommand("simulate", "Iterate the system from a start program");
  dyn_sim->add_option("--dynsys", da.dynsys)->required();
  dyn_sim->add_option("--model", da.model)->required();
  dyn_sim->add_option("--start", da.start)->capture_default_str();
  dyn_sim->add_option("--tol", da.tol)->capture_default_str();
  dyn_sim->add_option("--max-iters", da.max_iters)->capture_default_str();
  dyn_sim->add_option("--out", da.out);
  auto* dyn_check = dyn->add_subcommand("check", "Report the stability condition");
  dyn_check->add_option("--dynsys", da.dynsys)->required();

  ClusterArgs ca;
  auto* cluster_cmd = app.add_subcommand("cluster", "PCA + Gaussian mixture on codes");
  cluster_cmd->add_option("--model", ca.model)->required();
  cluster_cmd->add_option("--data", ca.data)->required();
  cluster_cmd->add_option("--k", ca.k)->capture_default_str();
  cluster_cmd->add_option("--var-fraction", ca.var_fraction)->capture_default_str();
  cluster_cmd->add_option("--reg", ca.reg)->capture_default_str();
  cluster_cmd->add_option("--out", ca.out);
  auto* outliers_cmd = app.add_subcommand("outliers", "Flag outliers from a CSV with a logdensity column");
  outliers_cmd->add_option("--in", ca.in)->required();
  outliers_cmd->add_option("--out", ca.out);

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict-eval", "Next-step prediction benchmark");
  predict_cmd->add_option("--model", pr.model)->required();
  predict_cmd->add_option("--traces", pr.traces)->required();
  predict_cmd->add_option("--folds", pr.folds)->capture_default_str();
  predict_cmd->add_option("--students", pr.students, "Training students per fold (0 = all)")->capture_default_str();
  predict_cmd->add_option("--lambda", pr.lambda)->capture_default_str();
  predict_cmd->add_option("--methods", pr.methods)->delimiter(',')->capture_default_str();
  predict_cmd->add_option("--solution", pr.solution, "Single solution for the linear model");
  predict_cmd->add_flag("--train-on-all", pr.train_on_all, "Evaluate on the training traces themselves");
  predict_cmd->add_option("--out", pr.out);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Synthetic data");
  synth->require_subcommand(1);
  auto* synth_corpus_cmd = synth->add_subcommand("corpus", "Random distinct trees, one per line");
  synth_corpus_cmd->add_option("--count", sa.count)->capture_default_str();
  synth_corpus_cmd->add_option("--max-depth", sa.max_depth)->capture_default_str();
  synth_corpus_cmd->add_option("--max-list", sa.max_list)->capture_default_str();
  synth_corpus_cmd->add_option("--out", sa.out);
  auto* synth_traces_cmd = synth->add_subcommand("traces", "Growth traces as JSONL");
  synth_traces_cmd->add_option("--students", sa.students)->capture_default_str();
  synth_traces_cmd->add_option("--steps", sa.steps)->capture_default_str();
  synth_traces_cmd->add_option("--max-depth", sa.max_depth)->default_val(5);
  synth_traces_cmd->add_option("--max-list", sa.max_list)->default_val(3);
  synth_traces_cmd->add_option("--task", sa.task)->capture_default_str();
  synth_traces_cmd->add_option("--out", sa.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  Context ctx(globals, out, err);
  try {
    if (*parse) {
      const std::string text = read_file(positional.at(0));
      out << serialize_tree(Grammar::minipy(), parse_program({text, positional[0]})) << "\n";
    } else if (*ted_cmd) {
      const Grammar& g = ctx.grammar();
      out << ted(ctx.tree_arg(g, positional.at(0)), ctx.tree_arg(g, positional.at(1))) << "\n";
    } else if (*grammar_cmd) {
      const Grammar& g = ctx.grammar();
      out << g.text();
      char buf[32];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(g.hash()));
      out << "# hash " << buf << "\n";
    } else if (*train_cmd) {
      return run_train(ctx, ta);
    } else if (*encode_cmd) {
      Model m = ctx.model(model_path);
      out << vec_csv(encode(m, ctx.tree_arg(m.grammar(), positional.at(0)))) << "\n";
    } else if (*decode_cmd) {
      Model m = ctx.model(model_path);
      out << serialize_tree(m.grammar(), decode(m, parse_vec(vec_text))) << "\n";
    } else if (*eval_cmd) {
      return run_eval_autoencode(ctx, ea);
    } else if (*project_cmd) {
      return run_project(ctx, pa);
    } else if (*grid_cmd) {
      return run_grid(ctx, pa);
    } else if (*dyn_fit) {
      return run_dynsys_fit(ctx, da);
    } else if (*dyn_sim) {
      return run_dynsys_simulate(ctx, da);
    } else if (*dyn_check) {
      return run_dynsys_check(ctx, da);
    } else if (*cluster_cmd) {
      return run_cluster(ctx, ca);
    } else if (*outliers_cmd) {
      return run_outliers(ctx, ca);
    } else if (*predict_cmd) {
      return run_predict_eval(ctx, pr);
    } else if (*synth_corpus_cmd) {
      return run_synth_corpus(ctx, sa);
    } else if (*synth_traces_cmd) {
      return run_synth_traces(ctx, sa);
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace treecode
