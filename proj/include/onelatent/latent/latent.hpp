#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "onelatent/model/tokenizer.hpp"
#include "onelatent/model/transformer.hpp"

namespace onelatent::latent {

using model::ForwardTrace;
using model::MicroTransformer;
using numeric::Tensor;

struct SpecialIds {
  int pad = model::Tokenizer::kPad;
  int bos = model::Tokenizer::kBos;
  int eos = model::Tokenizer::kEos;
  int begin_latent = -1;
  int latent = -1;
  int end_latent = -1;
};

// Which hidden state feeds a latent slot: the final (post-norm) output, or
// the residual stream after block `source_layer`.
enum class LayerSource { final_layer, block };

struct LatentConfig {
  std::size_t n_latents = 1;
  SpecialIds ids;
  LayerSource layer_source = LayerSource::final_layer;
  std::size_t source_layer = 0;
  bool stop_gradient = false;  // ablation: inject a detached copy

  void validate() const;
};

// Looks up the latent special tokens in `tok`.
SpecialIds special_ids(const model::Tokenizer& tok);

enum class Role { bos, question, begin_latent, latent, end_latent, cot, answer, eos };

struct AssembledSequence {
  std::vector<int> ids;
  std::vector<Role> roles;
  std::vector<bool> supervised;  // positions whose token is an NTP target
  std::vector<std::size_t> latent_positions;
  int stage = 0;

  std::size_t size() const { return ids.size(); }
  std::size_t begin_latent_position() const;
};

// Stage 1: [BOS, q, BOT, EOT, r, a, EOS], targets r, a, EOS.
// Stages 2-3: [BOS, q, BOT, LAT x N, EOT, a, EOS], targets a, EOS.
AssembledSequence assemble(std::span<const int> question, std::optional<std::span<const int>> cot,
                           std::span<const int> answer, int stage, const LatentConfig& cfg);

struct Decomposed {
  std::vector<int> question, cot, answer;
};

Decomposed decompose(const AssembledSequence& seq);

// One forward pass in which each latent position l (ascending) is fed the
// hidden state produced at l-1 in the same pass.
ForwardTrace fill_latents(const AssembledSequence& seq, const MicroTransformer& model, const LatentConfig& cfg);

// Final-layer hidden state at the single begin-latent position, as [1, d].
Tensor read_alignment_state(const ForwardTrace& trace, const AssembledSequence& seq);

}  // namespace onelatent::latent
