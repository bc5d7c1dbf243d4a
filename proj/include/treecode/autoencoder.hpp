#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "treecode/grammar.hpp"
#include "treecode/numerics.hpp"

namespace treecode {

struct ModelConfig {
  std::size_t latent_dim = 32;
  double beta = 1e-3;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t max_decode_nodes = 200;
  std::size_t max_list_length = 20;

  void check() const;  // throws DataError
};

// A named, contiguous slice of the flat parameter vector.
struct ParamBlock {
  std::string name;    // e.g. "enc.Call.U1", "dec.Module.0.gru.Wz"
  std::string family;  // e.g. "U", "gru_W", "stop_w"
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;  // 1 for vectors
  bool is_vector = false;
  std::size_t size() const { return rows * cols; }
};

struct TrainingMeta {
  std::size_t epochs_trained = 0;
  double final_loss = 0.0;
};

class Model {
 public:
  // Fresh model with parameters drawn uniformly from ±1/sqrt(n) using config.seed.
  Model(Grammar grammar, ModelConfig config);

  const Grammar& grammar() const { return grammar_; }
  std::uint64_t grammar_hash() const { return grammar_hash_; }
  const ModelConfig& config() const { return config_; }
  std::size_t dim() const { return config_.latent_dim; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(const std::string& name) const;
  // Copy of a block as a matrix (vectors come back as n×1).
  Mat block_matrix(const std::string& name) const;

  TrainingMeta& meta() { return meta_; }
  const TrainingMeta& meta() const { return meta_; }

  // Offsets used by the hot loops.
  struct GruOffsets {
    std::size_t wz, uz, bz, wr, ur, br, wh, uh, bh, stop_w, stop_b, out_w, out_b;
  };
  struct SlotOffsets {
    std::size_t enc_u = 0;
    std::size_t dec_v = 0, dec_c = 0;  // single slots
    GruOffsets gru{};                  // list slots
  };
  struct ElementOffsets {
    std::size_t enc_b = 0;
    std::vector<SlotOffsets> slots;
  };
  const ElementOffsets& offsets(int element) const { return offsets_[element]; }
  std::size_t scorer_h() const { return dec_h_; }
  std::size_t scorer_h0() const { return dec_h0_; }

 private:
  friend Model load_model(const std::string& path);
  std::size_t add_block(std::string name, std::string family, std::size_t rows, std::size_t cols,
                        bool is_vector);

  Grammar grammar_;
  std::uint64_t grammar_hash_;
  ModelConfig config_;
  std::vector<double> params_;
  std::vector<ParamBlock> blocks_;
  std::vector<ElementOffsets> offsets_;
  std::size_t dec_h_ = 0, dec_h0_ = 0;
  TrainingMeta meta_;
};

// Throws GrammarError unless `g` is the grammar the model was built for.
void require_grammar(const Model& m, const Grammar& g);

// Any well-formed subtree may be encoded; decoding always starts at the start symbol.
Vec encode(const Model& m, const Tree& t);
Tree decode(const Model& m, const Vec& z);
double decode_logprob(const Model& m, const Vec& z, const Tree& target);

// Softmax over the scorer rows of `permitted` at code `v`.
std::vector<double> choice_distribution(const Model& m, const Vec& v, std::span<const int> permitted);

// 0.5·‖z‖², the KL penalty against a standard normal up to a constant.
double kl_term(const Vec& z);

// Σ_i −log p(t_i | φ(t_i)+ε_i) + β·kl(φ(t_i)+ε_i), ε_i ~ N(0, I) drawn from rng.
double loss(const Model& m, std::span<const Tree> batch, Rng& rng);

struct Gradient {
  double loss = 0.0;
  std::vector<double> values;  // same layout as Model::params()
};
Gradient grad(const Model& m, std::span<const Tree> batch, Rng& rng);

struct TrainOptions {
  // Called after every epoch with (epoch index, batch loss).
  std::function<void(std::size_t, double)> on_epoch;
};

// Mini-batches are drawn with replacement; returns per-epoch losses.
std::vector<double> train(Model& m, std::span<const Tree> corpus, std::size_t epochs,
                          const TrainOptions& options = {});

void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

}  // namespace treecode
