#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onelatent/model/tokenizer.hpp"
#include "onelatent/model/transformer.hpp"
#include "onelatent/util/hash.hpp"

namespace onelatent::model {

// Model weights plus the tokenizer that defines their vocabulary.
struct ModelState {
  Tokenizer tokenizer;
  MicroTransformer model;
};

// Checkpoint file layout (all integers little-endian):
//   "OLMC" | version u16
//   vocab_size u32 | d u32 | layers u32 | heads u32 | max_seq_len u32 | ff_mult u32
//   tie_embeddings u8 | rng_seed u64
//   stage u8 | parent checkpoint hash [32] | config hash [32]
//   token count u32 | tokens (u32 length + UTF-8 bytes each)
//   parameter count u32 | per parameter: name (u32 length + bytes), count u64, f64[count]
struct Checkpoint {
  static constexpr std::uint16_t kVersion = 1;

  ModelState state;
  std::uint8_t stage = 0;  // 0 = freshly initialized
  Digest parent{};         // hash of the checkpoint this one was trained from
  Digest config_hash{};    // hash of the resolved run config
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

// Writes the checkpoint and returns the SHA-256 of the written bytes.
Digest save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Hash of the checkpoint bytes, as save_checkpoint would report it.
Digest checkpoint_hash(const Checkpoint& ckpt);

// Hash over parameter values only.
Digest parameter_hash(const MicroTransformer& model);

}  // namespace onelatent::model
