#include "treecode/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "json.hpp"

#include "treecode/error.hpp"
#include "treecode/io.hpp"

namespace treecode {

using json = nlohmann::json;

void ModelConfig::check() const {
  if (latent_dim < 1) throw DataError("config: latent_dim must be >= 1");
  if (!(beta >= 0.0)) throw DataError("config: beta must be >= 0");
  if (!(learning_rate > 0.0)) throw DataError("config: learning_rate must be > 0");
  if (batch_size < 1) throw DataError("config: batch_size must be >= 1");
  if (max_decode_nodes < 1) throw DataError("config: max_decode_nodes must be >= 1");
  if (max_list_length < 1) throw DataError("config: max_list_length must be >= 1");
}

// ---------------------------------------------------------------------------
// Model layout

std::size_t Model::add_block(std::string name, std::string family, std::size_t rows,
                             std::size_t cols, bool is_vector) {
  ParamBlock b{std::move(name), std::move(family), params_.size(), rows, cols, is_vector};
  params_.resize(params_.size() + b.size());
  blocks_.push_back(std::move(b));
  return blocks_.back().offset;
}

Model::Model(Grammar grammar, ModelConfig config)
    : grammar_(std::move(grammar)), grammar_hash_(grammar_.hash()), config_(config) {
  config_.check();
  const std::size_t n = config_.latent_dim;
  const std::size_t ne = grammar_.size();
  offsets_.resize(ne);

  for (std::size_t e = 0; e < ne; ++e) {
    const auto& el = grammar_.element(static_cast<int>(e));
    offsets_[e].slots.resize(el.slots.size());
    for (std::size_t k = 0; k < el.slots.size(); ++k) {
      offsets_[e].slots[k].enc_u = add_block("enc." + el.name + ".U" + std::to_string(k), "U", n, n, false);
    }
    offsets_[e].enc_b = add_block("enc." + el.name + ".b", "b", n, 1, true);
  }

  dec_h_ = add_block("dec.H", "H", ne, n, false);
  dec_h0_ = add_block("dec.h0", "h0", ne, 1, true);

  for (std::size_t e = 0; e < ne; ++e) {
    const auto& el = grammar_.element(static_cast<int>(e));
    for (std::size_t k = 0; k < el.slots.size(); ++k) {
      auto& so = offsets_[e].slots[k];
      const std::string p = "dec." + el.name + "." + std::to_string(k) + ".";
      if (el.slots[k].kind == SlotKind::kSingle) {
        so.dec_v = add_block(p + "V", "V", n, n, false);
        so.dec_c = add_block(p + "c", "c", n, 1, true);
        continue;
      }
      auto& g = so.gru;
      g.wz = add_block(p + "gru.Wz", "gru_W", n, n, false);
      g.uz = add_block(p + "gru.Uz", "gru_U", n, n, false);
      g.bz = add_block(p + "gru.bz", "gru_b", n, 1, true);
      g.wr = add_block(p + "gru.Wr", "gru_W", n, n, false);
      g.ur = add_block(p + "gru.Ur", "gru_U", n, n, false);
      g.br = add_block(p + "gru.br", "gru_b", n, 1, true);
      g.wh = add_block(p + "gru.Wh", "gru_W", n, n, false);
      g.uh = add_block(p + "gru.Uh", "gru_U", n, n, false);
      g.bh = add_block(p + "gru.bh", "gru_b", n, 1, true);
      g.stop_w = add_block(p + "stop.w", "stop_w", n, 1, true);
      g.stop_b = add_block(p + "stop.b", "stop_b", 1, 1, true);
      g.out_w = add_block(p + "out.W", "out_W", n, n, false);
      g.out_b = add_block(p + "out.b", "out_b", n, 1, true);
    }
  }

  Rng rng(config_.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(n));
  for (double& x : params_) x = (2.0 * rng.uniform() - 1.0) * bound;
}

const ParamBlock& Model::block(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw DataError("no parameter block named " + name);
}

Mat Model::block_matrix(const std::string& name) const {
  const ParamBlock& b = block(name);
  Mat out(b.rows, b.cols);
  std::copy_n(params_.data() + b.offset, b.size(), out.data());
  return out;
}

void require_grammar(const Model& m, const Grammar& g) {
  if (g.hash() != m.grammar_hash()) {
    throw GrammarError("grammar hash mismatch: model was trained on a different grammar");
  }
}

double kl_term(const Vec& z) { return 0.5 * dot(z, z); }

// ---------------------------------------------------------------------------
// Kernels

namespace {

// y += A·x, A is rows×cols row-major.
inline void gemv(double* y, const double* a, const double* x, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* r = a + i * cols;
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t j = 0;
    for (; j + 4 <= cols; j += 4) {
      s0 += r[j] * x[j];
      s1 += r[j + 1] * x[j + 1];
      s2 += r[j + 2] * x[j + 2];
      s3 += r[j + 3] * x[j + 3];
    }
    for (; j < cols; ++j) s0 += r[j] * x[j];
    y[i] += (s0 + s1) + (s2 + s3);
  }
}

// y += Aᵀ·x
inline void gemv_t(double* __restrict y, const double* __restrict a, const double* __restrict x,
                   std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double xi = x[i];
    const double* r = a + i * cols;
    for (std::size_t j = 0; j < cols; ++j) y[j] += r[j] * xi;
  }
}

// A += u·vᵀ
inline void ger(double* __restrict a, const double* __restrict u, const double* __restrict v,
                std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double ui = u[i];
    double* r = a + i * cols;
    for (std::size_t j = 0; j < cols; ++j) r[j] += ui * v[j];
  }
}

inline void axpy(double* __restrict y, const double* __restrict x, std::size_t n, double s = 1.0) {
  for (std::size_t j = 0; j < n; ++j) y[j] += s * x[j];
}

inline double dotp(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0;
  std::size_t j = 0;
  for (; j + 2 <= n; j += 2) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
  }
  for (; j < n; ++j) s0 += a[j] * b[j];
  return s0 + s1;
}

inline double sigmoid(double a) {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

// log σ(a) and log(1 − σ(a)) without overflow.
inline double log_sigmoid(double a) { return a >= 0 ? -std::log1p(std::exp(-a)) : a - std::log1p(std::exp(a)); }
inline double log1m_sigmoid(double a) { return log_sigmoid(-a); }

// Postorder-indexed tree with resolved element indices.
struct CompiledTree {
  struct Node {
    int element;
    std::vector<std::vector<int>> groups;
  };
  std::vector<Node> nodes;
  int root = -1;
};

int compile_into(const Grammar& g, const Tree& t, CompiledTree& out) {
  CompiledTree::Node node{g.index_of(t.label), {}};
  node.groups.reserve(t.groups.size());
  for (const auto& group : t.groups) {
    std::vector<int> ids;
    ids.reserve(group.size());
    for (const auto& child : group) ids.push_back(compile_into(g, child, out));
    node.groups.push_back(std::move(ids));
  }
  out.nodes.push_back(std::move(node));
  return static_cast<int>(out.nodes.size()) - 1;
}

void require_valid(const Grammar& g, const Tree& t, const char* what, bool rooted) {
  auto v = rooted ? validate(g, t) : validate_subtree(g, t);
  if (!v.empty()) {
    throw DataError(std::string(what) + ": invalid tree at '" + v.front().path + "': " + v.front().message);
  }
}

CompiledTree compile(const Model& m, const Tree& t, const char* what, bool rooted = true) {
  require_valid(m.grammar(), t, what, rooted);
  CompiledTree c;
  c.root = compile_into(m.grammar(), t, c);
  for (const auto& node : c.nodes) {
    for (const auto& group : node.groups) {
      if (group.size() > m.config().max_list_length) {
        throw DataError(std::string(what) + ": list of length " + std::to_string(group.size()) +
                        " exceeds max_list_length " + std::to_string(m.config().max_list_length));
      }
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Encoder

struct EncoderPass {
  std::vector<double> codes;  // nodes × n
};

void encode_forward(const Model& m, const CompiledTree& t, EncoderPass& pass) {
  const std::size_t n = m.dim();
  const double* p = m.params().data();
  pass.codes.assign(t.nodes.size() * n, 0.0);
  std::vector<double> s(n);
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    const auto& node = t.nodes[i];
    const auto& off = m.offsets(node.element);
    double* out = pass.codes.data() + i * n;
    std::copy_n(p + off.enc_b, n, out);
    for (std::size_t k = 0; k < node.groups.size(); ++k) {
      if (node.groups[k].empty()) continue;
      std::fill(s.begin(), s.end(), 0.0);
      for (int c : node.groups[k]) axpy(s.data(), pass.codes.data() + c * n, n);
      gemv(out, p + off.slots[k].enc_u, s.data(), n, n);
    }
    for (std::size_t j = 0; j < n; ++j) out[j] = std::tanh(out[j]);
  }
}

void encode_backward(const Model& m, const CompiledTree& t, const EncoderPass& pass, const double* dz,
                     double* grad) {
  const std::size_t n = m.dim();
  const double* p = m.params().data();
  std::vector<double> dcodes(t.nodes.size() * n, 0.0);
  std::copy_n(dz, n, dcodes.data() + t.root * n);
  std::vector<double> dpre(n), s(n), ds(n);
  for (std::size_t ii = t.nodes.size(); ii-- > 0;) {
    const auto& node = t.nodes[ii];
    const auto& off = m.offsets(node.element);
    const double* code = pass.codes.data() + ii * n;
    const double* dc = dcodes.data() + ii * n;
    for (std::size_t j = 0; j < n; ++j) dpre[j] = dc[j] * (1.0 - code[j] * code[j]);
    axpy(grad + off.enc_b, dpre.data(), n);
    for (std::size_t k = 0; k < node.groups.size(); ++k) {
      if (node.groups[k].empty()) continue;
      std::fill(s.begin(), s.end(), 0.0);
      for (int c : node.groups[k]) axpy(s.data(), pass.codes.data() + c * n, n);
      ger(grad + off.slots[k].enc_u, dpre.data(), s.data(), n, n);
      std::fill(ds.begin(), ds.end(), 0.0);
      gemv_t(ds.data(), p + off.slots[k].enc_u, dpre.data(), n, n);
      for (int c : node.groups[k]) axpy(dcodes.data() + c * n, ds.data(), n);
    }
  }
}

// ---------------------------------------------------------------------------
// Decoder, teacher forced. With grad == nullptr only the log-probability
// is computed; otherwise parameter gradients of −log p are accumulated into
// grad and ∂(−log p)/∂v is added to dv.

class Teacher {
 public:
  Teacher(const Model& m, const CompiledTree& t, double* grad)
      : m_(m), g_(m.grammar()), t_(t), p_(m.params().data()), grad_(grad), n_(m.dim()) {}

  double run(const double* z, double* dz) { return node(t_.root, z, g_.start_choices(), dz); }

 private:
  double node(int idx, const double* v, const std::vector<int>& choices, double* dv) {
    const auto& nd = t_.nodes[idx];
    const std::size_t n = n_;
    const double* H = p_ + m_.scorer_h();
    const double* h0 = p_ + m_.scorer_h0();

    std::vector<double> scores(choices.size());
    double best = -std::numeric_limits<double>::infinity();
    std::size_t target = choices.size();
    for (std::size_t c = 0; c < choices.size(); ++c) {
      const int j = choices[c];
      scores[c] = dotp(H + j * n, v, n) + h0[j];
      best = std::max(best, scores[c]);
      if (j == nd.element) target = c;
    }
    if (target == choices.size()) throw DataError("decode_logprob: element not permitted");
    double z = 0.0;
    for (double s : scores) z += std::exp(s - best);
    const double lse = best + std::log(z);
    double logp = scores[target] - lse;

    if (grad_) {
      for (std::size_t c = 0; c < choices.size(); ++c) {
        const int j = choices[c];
        const double d = std::exp(scores[c] - lse) - (c == target ? 1.0 : 0.0);
        if (d == 0.0) continue;
        axpy(grad_ + m_.scorer_h() + j * n, v, n, d);
        grad_[m_.scorer_h0() + j] += d;
        axpy(dv, H + j * n, n, d);
      }
    }

    const auto& off = m_.offsets(nd.element);
    for (std::size_t k = 0; k < nd.groups.size(); ++k) {
      const auto& sch = g_.slot_choices(nd.element, static_cast<int>(k));
      const auto& so = off.slots[k];
      if (g_.element(nd.element).slots[k].kind == SlotKind::kSingle) {
        logp += single(nd.groups[k][0], v, so, sch, dv);
      } else {
        logp += list(nd.groups[k], v, so.gru, sch, dv);
      }
    }
    return logp;
  }

  double single(int child, const double* v, const Model::SlotOffsets& so, const std::vector<int>& sch,
                double* dv) {
    const std::size_t n = n_;
    std::vector<double> u(p_ + so.dec_c, p_ + so.dec_c + n);
    gemv(u.data(), p_ + so.dec_v, v, n, n);
    for (double& x : u) x = std::tanh(x);
    std::vector<double> du(grad_ ? n : 0, 0.0);
    const double logp = node(child, u.data(), sch, grad_ ? du.data() : nullptr);
    if (grad_) {
      for (std::size_t j = 0; j < n; ++j) du[j] *= 1.0 - u[j] * u[j];
      ger(grad_ + so.dec_v, du.data(), v, n, n);
      axpy(grad_ + so.dec_c, du.data(), n);
      gemv_t(dv, p_ + so.dec_v, du.data(), n, n);
    }
    return logp;
  }

  double list(const std::vector<int>& kids, const double* v, const Model::GruOffsets& go,
              const std::vector<int>& sch, double* dv) {
    const std::size_t n = n_;
    const std::size_t len = kids.size();
    const bool stop_scored = len < m_.config().max_list_length;

    std::vector<double> S((len + 1) * n);  // states
    std::vector<double> U(len * n);        // child codes
    std::vector<double> Z(len * n), R(len * n), HT(len * n);
    std::vector<double> A(len + 1);  // stop logits
    std::vector<double> dU(grad_ ? len * n : 0, 0.0);
    std::vector<double> rh(n);
    std::copy_n(v, n, S.data());

    double logp = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double* s = S.data() + i * n;
      A[i] = dotp(p_ + go.stop_w, s, n) + p_[go.stop_b];
      logp += log_sigmoid(A[i]);

      double* u = U.data() + i * n;
      std::copy_n(p_ + go.out_b, n, u);
      gemv(u, p_ + go.out_w, s, n, n);
      for (std::size_t j = 0; j < n; ++j) u[j] = std::tanh(u[j]);
      logp += node(kids[i], u, sch, grad_ ? dU.data() + i * n : nullptr);

      double* z = Z.data() + i * n;
      double* r = R.data() + i * n;
      double* ht = HT.data() + i * n;
      std::copy_n(p_ + go.bz, n, z);
      gemv(z, p_ + go.wz, u, n, n);
      gemv(z, p_ + go.uz, s, n, n);
      std::copy_n(p_ + go.br, n, r);
      gemv(r, p_ + go.wr, u, n, n);
      gemv(r, p_ + go.ur, s, n, n);
      for (std::size_t j = 0; j < n; ++j) {
        z[j] = sigmoid(z[j]);
        r[j] = sigmoid(r[j]);
        rh[j] = r[j] * s[j];
      }
      std::copy_n(p_ + go.bh, n, ht);
      gemv(ht, p_ + go.wh, u, n, n);
      gemv(ht, p_ + go.uh, rh.data(), n, n);
      double* next = S.data() + (i + 1) * n;
      for (std::size_t j = 0; j < n; ++j) {
        ht[j] = std::tanh(ht[j]);
        next[j] = (1.0 - z[j]) * s[j] + z[j] * ht[j];
      }
    }
    if (stop_scored) {
      A[len] = dotp(p_ + go.stop_w, S.data() + len * n, n) + p_[go.stop_b];
      logp += log1m_sigmoid(A[len]);
    }
    if (!grad_) return logp;

    std::vector<double> dS(n, 0.0), dprev(n), dx(n), dzp(n), drp(n), dhp(n), drh(n);
    if (stop_scored) {
      const double d = sigmoid(A[len]);
      axpy(dS.data(), p_ + go.stop_w, n, d);
      axpy(grad_ + go.stop_w, S.data() + len * n, n, d);
      grad_[go.stop_b] += d;
    }
    for (std::size_t i = len; i-- > 0;) {
      const double* s = S.data() + i * n;
      const double* u = U.data() + i * n;
      const double* z = Z.data() + i * n;
      const double* r = R.data() + i * n;
      const double* ht = HT.data() + i * n;

      for (std::size_t j = 0; j < n; ++j) {
        dprev[j] = dS[j] * (1.0 - z[j]);
        dzp[j] = dS[j] * (ht[j] - s[j]) * z[j] * (1.0 - z[j]);
        dhp[j] = dS[j] * z[j] * (1.0 - ht[j] * ht[j]);
        rh[j] = r[j] * s[j];
      }
      std::copy_n(dU.data() + i * n, n, dx.data());
      // candidate
      ger(grad_ + go.wh, dhp.data(), u, n, n);
      ger(grad_ + go.uh, dhp.data(), rh.data(), n, n);
      axpy(grad_ + go.bh, dhp.data(), n);
      gemv_t(dx.data(), p_ + go.wh, dhp.data(), n, n);
      std::fill(drh.begin(), drh.end(), 0.0);
      gemv_t(drh.data(), p_ + go.uh, dhp.data(), n, n);
      for (std::size_t j = 0; j < n; ++j) {
        dprev[j] += drh[j] * r[j];
        drp[j] = drh[j] * s[j] * r[j] * (1.0 - r[j]);
      }
      // update gate
      ger(grad_ + go.wz, dzp.data(), u, n, n);
      ger(grad_ + go.uz, dzp.data(), s, n, n);
      axpy(grad_ + go.bz, dzp.data(), n);
      gemv_t(dx.data(), p_ + go.wz, dzp.data(), n, n);
      gemv_t(dprev.data(), p_ + go.uz, dzp.data(), n, n);
      // reset gate
      ger(grad_ + go.wr, drp.data(), u, n, n);
      ger(grad_ + go.ur, drp.data(), s, n, n);
      axpy(grad_ + go.br, drp.data(), n);
      gemv_t(dx.data(), p_ + go.wr, drp.data(), n, n);
      gemv_t(dprev.data(), p_ + go.ur, drp.data(), n, n);
      // output head
      for (std::size_t j = 0; j < n; ++j) dx[j] *= 1.0 - u[j] * u[j];
      ger(grad_ + go.out_w, dx.data(), s, n, n);
      axpy(grad_ + go.out_b, dx.data(), n);
      gemv_t(dprev.data(), p_ + go.out_w, dx.data(), n, n);
      // continue decision
      const double d = sigmoid(A[i]) - 1.0;
      axpy(dprev.data(), p_ + go.stop_w, n, d);
      axpy(grad_ + go.stop_w, s, n, d);
      grad_[go.stop_b] += d;
      std::swap(dS, dprev);
    }
    axpy(dv, dS.data(), n);
    return logp;
  }

  const Model& m_;
  const Grammar& g_;
  const CompiledTree& t_;
  const double* p_;
  double* grad_;
  std::size_t n_;
};

// Loss of one tree; accumulates parameter gradients when grad != nullptr.
double tree_loss(const Model& m, const CompiledTree& t, Rng& rng, double* grad) {
  const std::size_t n = m.dim();
  EncoderPass pass;
  encode_forward(m, t, pass);
  std::vector<double> z(pass.codes.begin() + t.root * n, pass.codes.begin() + (t.root + 1) * n);
  for (double& x : z) x += rng.normal();
  const double beta = m.config().beta;
  const double kl = 0.5 * dotp(z.data(), z.data(), n);

  std::vector<double> dz(grad ? n : 0, 0.0);
  Teacher teacher(m, t, grad);
  const double logp = teacher.run(z.data(), grad ? dz.data() : nullptr);
  if (grad) {
    axpy(dz.data(), z.data(), n, beta);
    encode_backward(m, t, pass, dz.data(), grad);
  }
  return -logp + beta * kl;
}

// ---------------------------------------------------------------------------
// Greedy decoding

class Greedy {
 public:
  explicit Greedy(const Model& m) : m_(m), g_(m.grammar()), p_(m.params().data()), n_(m.dim()) {
    min_size_ = min_completion_sizes(g_);
  }

  Tree run(const double* z) { return node(z, g_.start_choices(), 0); }

 private:
  bool exhausted() const { return emitted_ >= m_.config().max_decode_nodes; }

  // Argmax of the masked scorer. Once the node budget is spent only the
  // elements with the smallest completion are eligible, so decoding ends.
  int choose(const double* v, const std::vector<int>& choices) const {
    const std::size_t n = n_;
    const double* H = p_ + m_.scorer_h();
    const double* h0 = p_ + m_.scorer_h0();
    double floor = std::numeric_limits<double>::infinity();
    if (exhausted()) {
      for (int j : choices) floor = std::min(floor, min_size_[j]);
    }
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int j : choices) {
      if (exhausted() && min_size_[j] > floor) continue;
      const double s = dotp(H + j * n, v, n) + h0[j];
      if (best < 0 || s > best_score) {
        best = j;
        best_score = s;
      }
    }
    return best;
  }

  Tree node(const double* v, const std::vector<int>& choices, std::size_t depth) {
    if (depth > m_.config().max_decode_nodes + g_.size() + 1) {
      throw GrammarError("decode: grammar has no finite completion");
    }
    const int e = choose(v, choices);
    ++emitted_;
    const auto& el = g_.element(e);
    const auto& off = m_.offsets(e);
    const std::size_t n = n_;
    Tree out(el.name);
    out.groups.resize(el.slots.size());
    std::vector<double> u(n), s(n), next(n), z(n), r(n), rh(n);
    for (std::size_t k = 0; k < el.slots.size(); ++k) {
      const auto& sch = g_.slot_choices(e, static_cast<int>(k));
      const auto& so = off.slots[k];
      if (el.slots[k].kind == SlotKind::kSingle) {
        std::copy_n(p_ + so.dec_c, n, u.data());
        gemv(u.data(), p_ + so.dec_v, v, n, n);
        for (double& x : u) x = std::tanh(x);
        out.groups[k].push_back(node(u.data(), sch, depth + 1));
        continue;
      }
      const auto& go = so.gru;
      std::copy_n(v, n, s.data());
      while (out.groups[k].size() < m_.config().max_list_length && !exhausted()) {
        const double a = dotp(p_ + go.stop_w, s.data(), n) + p_[go.stop_b];
        if (!(sigmoid(a) > 0.5)) break;
        std::copy_n(p_ + go.out_b, n, u.data());
        gemv(u.data(), p_ + go.out_w, s.data(), n, n);
        for (double& x : u) x = std::tanh(x);
        out.groups[k].push_back(node(u.data(), sch, depth + 1));

        std::copy_n(p_ + go.bz, n, z.data());
        gemv(z.data(), p_ + go.wz, u.data(), n, n);
        gemv(z.data(), p_ + go.uz, s.data(), n, n);
        std::copy_n(p_ + go.br, n, r.data());
        gemv(r.data(), p_ + go.wr, u.data(), n, n);
        gemv(r.data(), p_ + go.ur, s.data(), n, n);
        for (std::size_t j = 0; j < n; ++j) {
          z[j] = sigmoid(z[j]);
          rh[j] = sigmoid(r[j]) * s[j];
        }
        std::copy_n(p_ + go.bh, n, next.data());
        gemv(next.data(), p_ + go.wh, u.data(), n, n);
        gemv(next.data(), p_ + go.uh, rh.data(), n, n);
        for (std::size_t j = 0; j < n; ++j) next[j] = (1.0 - z[j]) * s[j] + z[j] * std::tanh(next[j]);
        std::swap(s, next);
      }
    }
    return out;
  }

  const Model& m_;
  const Grammar& g_;
  const double* p_;
  std::size_t n_;
  std::vector<double> min_size_;
  std::size_t emitted_ = 0;
};

void require_dim(const Model& m, const Vec& z, const char* what) {
  if (z.size() != m.dim()) {
    throw DataError(std::string(what) + ": code has dimension " + std::to_string(z.size()) +
                    ", model expects " + std::to_string(m.dim()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Public operations

Vec encode(const Model& m, const Tree& t) {
  CompiledTree c = compile(m, t, "encode", false);
  EncoderPass pass;
  encode_forward(m, c, pass);
  const std::size_t n = m.dim();
  return Vec(std::vector<double>(pass.codes.begin() + c.root * n, pass.codes.begin() + (c.root + 1) * n));
}

Tree decode(const Model& m, const Vec& z) {
  require_dim(m, z, "decode");
  return Greedy(m).run(z.data());
}

double decode_logprob(const Model& m, const Vec& z, const Tree& target) {
  require_dim(m, z, "decode_logprob");
  CompiledTree c = compile(m, target, "decode_logprob");
  return Teacher(m, c, nullptr).run(z.data(), nullptr);
}

std::vector<double> choice_distribution(const Model& m, const Vec& v, std::span<const int> permitted) {
  require_dim(m, v, "choice_distribution");
  if (permitted.empty()) throw DataError("choice_distribution: no permitted elements");
  const std::size_t n = m.dim();
  const double* H = m.params().data() + m.scorer_h();
  const double* h0 = m.params().data() + m.scorer_h0();
  std::vector<double> s(permitted.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < permitted.size(); ++c) {
    const int j = permitted[c];
    if (j < 0 || static_cast<std::size_t>(j) >= m.grammar().size()) {
      throw DataError("choice_distribution: element index out of range");
    }
    s[c] = dotp(H + j * n, v.data(), n) + h0[j];
    best = std::max(best, s[c]);
  }
  double total = 0.0;
  for (double& x : s) total += (x = std::exp(x - best));
  for (double& x : s) x /= total;
  return s;
}

double loss(const Model& m, std::span<const Tree> batch, Rng& rng) {
  if (batch.empty()) throw DataError("loss: empty batch");
  double total = 0.0;
  for (const Tree& t : batch) total += tree_loss(m, compile(m, t, "loss"), rng, nullptr);
  return total;
}

Gradient grad(const Model& m, std::span<const Tree> batch, Rng& rng) {
  if (batch.empty()) throw DataError("grad: empty batch");
  Gradient out;
  out.values.assign(m.params().size(), 0.0);
  for (const Tree& t : batch) out.loss += tree_loss(m, compile(m, t, "grad"), rng, out.values.data());
  return out;
}

std::vector<double> train(Model& m, std::span<const Tree> corpus, std::size_t epochs,
                          const TrainOptions& options) {
  if (corpus.empty()) throw DataError("train: empty corpus");
  std::vector<CompiledTree> compiled;
  compiled.reserve(corpus.size());
  for (const Tree& t : corpus) compiled.push_back(compile(m, t, "train"));

  const auto& cfg = m.config();
  AdamState adam(m.params().size(), AdamConfig{cfg.learning_rate});
  Rng rng(cfg.seed ^ (0xD1B54A32D192ED03ull * (m.meta().epochs_trained + 1)));
  std::vector<double> g(m.params().size());
  std::vector<double> curve;
  curve.reserve(epochs);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::fill(g.begin(), g.end(), 0.0);
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto& t = compiled[rng.uniform_index(compiled.size())];
      batch_loss += tree_loss(m, t, rng, g.data());
    }
    if (!std::isfinite(batch_loss)) throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
    adam.step(m.params(), g);
    curve.push_back(batch_loss);
    ++m.meta().epochs_trained;
    m.meta().final_loss = batch_loss;
    if (options.on_epoch) options.on_epoch(epoch, batch_loss);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr int kModelVersion = 1;

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

}  // namespace

void save_model(const Model& m, const std::string& path) {
  json j;
  j["format"] = "treecode-model";
  j["version"] = kModelVersion;
  j["grammar"] = m.grammar().text();
  j["grammar_hash"] = hex64(m.grammar_hash());
  const auto& c = m.config();
  j["config"] = {{"latent_dim", c.latent_dim},       {"beta", c.beta},
                 {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                 {"seed", c.seed},                   {"max_decode_nodes", c.max_decode_nodes},
                 {"max_list_length", c.max_list_length}};
  j["meta"] = {{"epochs_trained", m.meta().epochs_trained}, {"final_loss", m.meta().final_loss}};
  json params = json::object();
  const double* p = m.params().data();
  for (const auto& b : m.blocks()) {
    if (b.is_vector) {
      params[b.name] = std::vector<double>(p + b.offset, p + b.offset + b.size());
      continue;
    }
    json rows = json::array();
    for (std::size_t r = 0; r < b.rows; ++r) {
      rows.push_back(std::vector<double>(p + b.offset + r * b.cols, p + b.offset + (r + 1) * b.cols));
    }
    params[b.name] = std::move(rows);
  }
  j["params"] = std::move(params);
  write_file_atomic(path, j.dump() + "\n");
}

Model load_model(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError("model file " + path + ": " + e.what());
  }
  try {
    if (j.value("format", "") != "treecode-model") throw DataError("model file " + path + ": not a model file");
    const int version = j.at("version").get<int>();
    if (version != kModelVersion) {
      throw DataError("model file " + path + ": unsupported version " + std::to_string(version));
    }
    Grammar g = Grammar::parse(j.at("grammar").get<std::string>());
    if (hex64(g.hash()) != j.at("grammar_hash").get<std::string>()) {
      throw GrammarError("model file " + path + ": grammar hash mismatch");
    }
    ModelConfig c;
    const json& jc = j.at("config");
    c.latent_dim = jc.at("latent_dim").get<std::size_t>();
    c.beta = jc.at("beta").get<double>();
    c.learning_rate = jc.at("learning_rate").get<double>();
    c.batch_size = jc.at("batch_size").get<std::size_t>();
    c.seed = jc.at("seed").get<std::uint64_t>();
    c.max_decode_nodes = jc.at("max_decode_nodes").get<std::size_t>();
    c.max_list_length = jc.at("max_list_length").get<std::size_t>();
    Model m(std::move(g), c);
    m.meta_.epochs_trained = j.at("meta").at("epochs_trained").get<std::size_t>();
    m.meta_.final_loss = j.at("meta").at("final_loss").get<double>();

    const json& jp = j.at("params");
    for (const auto& b : m.blocks_) {
      if (!jp.contains(b.name)) throw DataError("model file " + path + ": missing block " + b.name);
      const json& arr = jp.at(b.name);
      double* dst = m.params_.data() + b.offset;
      if (b.is_vector) {
        auto v = arr.get<std::vector<double>>();
        if (v.size() != b.size()) throw DataError("model file " + path + ": bad shape for " + b.name);
        std::copy(v.begin(), v.end(), dst);
        continue;
      }
      auto rows = arr.get<std::vector<std::vector<double>>>();
      if (rows.size() != b.rows) throw DataError("model file " + path + ": bad shape for " + b.name);
      for (std::size_t r = 0; r < b.rows; ++r) {
        if (rows[r].size() != b.cols) throw DataError("model file " + path + ": bad shape for " + b.name);
        std::copy(rows[r].begin(), rows[r].end(), dst + r * b.cols);
      }
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError("model file " + path + ": " + e.what());
  }
}

}  // namespace treecode
