#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "onelatent/numeric/optim.hpp"
#include "onelatent/numeric/tensor.hpp"

namespace onelatent::model {

using numeric::Tensor;

struct ModelConfig {
  std::uint32_t vocab_size = 0;
  std::uint32_t d = 128;
  std::uint32_t layers = 4;
  std::uint32_t heads = 4;
  std::uint32_t max_seq_len = 320;
  std::uint32_t ff_mult = 4;
  std::uint64_t rng_seed = 0;
  bool tie_embeddings = false;

  void validate() const;
};

// Position -> replacement input embedding (length d).
using Overrides = std::map<std::size_t, Tensor>;

struct ForwardTrace {
  Tensor logits;        // [seq_len, vocab]
  Tensor final_hidden;  // [seq_len, d], after the final layer norm
  std::vector<Tensor> layer_hiddens;  // residual stream after each block, when requested
};

// Small pre-norm decoder-only transformer with learned absolute positions.
class MicroTransformer {
 public:
  explicit MicroTransformer(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::uint32_t vocab_size() const { return cfg_.vocab_size; }
  std::uint32_t hidden_dim() const { return cfg_.d; }

  // Full-sequence forward. Override vectors replace the token embedding at
  // their position (the positional embedding is still added).
  ForwardTrace forward(std::span<const int> ids, const Overrides& overrides = {}, bool keep_layers = false) const;

  // Parameters in checkpoint order.
  std::vector<numeric::Parameter> parameters() const;

  // Appends vocabulary entries: one input-embedding row and one output column
  // (plus bias) per new token.
  void append_tokens(const std::vector<std::vector<double>>& embedding_rows,
                     const std::vector<std::vector<double>>& output_columns, const std::vector<double>& output_bias);

  // Replaces every parameter value (same order and sizes as parameters()).
  void load_parameters(const std::vector<std::vector<double>>& values);

  // Deep copy with no shared tensors.
  MicroTransformer clone() const;

  const Tensor& token_embedding() const { return tok_emb_; }
  const Tensor& output_weight() const { return head_w_; }
  const Tensor& output_bias() const { return head_b_; }

 private:
  friend class ForwardSession;

  struct Block {
    Tensor ln1_g, ln1_b, wq, wk, wv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  ModelConfig cfg_;
  Tensor tok_emb_;  // [V, d]
  Tensor pos_emb_;  // [T, d]
  std::vector<Block> blocks_;
  Tensor lnf_g_, lnf_b_;
  Tensor head_w_;  // [d, V]
  Tensor head_b_;  // [V]
};

struct ChunkOutput {
  Tensor logits;        // rows for the appended positions only
  Tensor final_hidden;  // same rows
  std::vector<Tensor> layer_hiddens;
};

// Incremental forward: positions are appended chunk by chunk, and each chunk
// attends to every earlier position through cached per-layer keys/values.
// Row computations do not depend on how the sequence is chunked, so any
// chunking reproduces the full-sequence forward bit for bit.
class ForwardSession {
 public:
  explicit ForwardSession(const MicroTransformer& model, bool keep_layers = false);

  // Appends ids at positions length()..length()+ids.size()-1. Override keys
  // are absolute positions inside the new chunk.
  ChunkOutput extend(std::span<const int> ids, const Overrides& overrides = {});

  std::size_t length() const { return length_; }

  // Concatenation of every chunk so far.
  ForwardTrace trace() const;

 private:
  const MicroTransformer* model_;
  bool keep_layers_;
  std::size_t length_ = 0;
  std::vector<Tensor> keys_, values_;
  std::vector<Tensor> logits_, hidden_;
  std::vector<std::vector<Tensor>> layers_;
};

// Greedy decoding.
struct LatentPlan {
  std::size_t slots = 0;
  int latent_id = -1;
  int end_latent_id = -1;  // forced after the slots; -1 for none
  bool fill_from_hidden = true;
};

struct Generation {
  std::vector<int> tokens;  // sampled tokens only, EOS included when emitted
  std::vector<std::vector<double>> step_hidden;  // final hidden that produced each sampled token
  bool hit_eos = false;
};

// Runs frozen (no graph). After the prompt, `plan.slots` latent positions are
// filled with the preceding final hidden state, then `end_latent_id` is
// forced, then up to `max_new_tokens` tokens are chosen greedily. Ids in
// `banned` are never sampled.
Generation generate(const MicroTransformer& model, std::span<const int> prompt, std::size_t max_new_tokens,
                    const LatentPlan& plan, int eos_id, std::span<const int> banned = {});

}  // namespace onelatent::model
