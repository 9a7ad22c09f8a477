#include "onelatent/model/checkpoint.hpp"

#include "onelatent/util/binio.hpp"
#include "onelatent/util/error.hpp"

namespace onelatent::model {

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& cfg = ckpt.state.model.config();
  if (ckpt.state.tokenizer.size() != cfg.vocab_size) {
    throw ContractViolation("checkpoint: tokenizer size differs from model vocabulary");
  }
  ByteWriter w;
  w.magic("OLMC");
  w.u16(Checkpoint::kVersion);
  w.u32(cfg.vocab_size);
  w.u32(cfg.d);
  w.u32(cfg.layers);
  w.u32(cfg.heads);
  w.u32(cfg.max_seq_len);
  w.u32(cfg.ff_mult);
  w.u8(cfg.tie_embeddings ? 1 : 0);
  w.u64(cfg.rng_seed);
  w.u8(ckpt.stage);
  w.bytes(ckpt.parent);
  w.bytes(ckpt.config_hash);
  const auto& toks = ckpt.state.tokenizer.tokens();
  w.u32(static_cast<std::uint32_t>(toks.size()));
  for (const auto& t : toks) w.str(t);
  const auto params = ckpt.state.model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u64(p.value.numel());
    w.f64s(p.value.data());
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("OLMC");
  const auto version = r.u16();
  if (version != Checkpoint::kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  ModelConfig cfg;
  cfg.vocab_size = r.u32();
  cfg.d = r.u32();
  cfg.layers = r.u32();
  cfg.heads = r.u32();
  cfg.max_seq_len = r.u32();
  cfg.ff_mult = r.u32();
  cfg.tie_embeddings = r.u8() != 0;
  cfg.rng_seed = r.u64();
  const auto stage = r.u8();
  Digest parent{}, config_hash{};
  r.bytes(parent);
  r.bytes(config_hash);
  std::vector<std::string> toks(r.u32());
  for (auto& t : toks) t = r.str();
  Tokenizer tokenizer = Tokenizer::from_tokens(std::move(toks));
  MicroTransformer model(cfg);
  const auto params = model.parameters();
  const auto count = r.u32();
  if (count != params.size()) throw FormatError("checkpoint: parameter count mismatch");
  std::vector<std::vector<double>> values;
  for (const auto& p : params) {
    const auto name = r.str();
    if (name != p.name) throw FormatError("checkpoint: expected parameter " + p.name + ", found " + name);
    const auto n = r.u64();
    if (n != p.value.numel()) throw FormatError("checkpoint: size mismatch for " + name);
    std::vector<double> v(n);
    r.f64s(v);
    values.push_back(std::move(v));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  model.load_parameters(values);
  if (tokenizer.size() != cfg.vocab_size) throw FormatError("checkpoint: tokenizer size differs from vocabulary");
  Checkpoint c{ModelState{std::move(tokenizer), std::move(model)}, stage, parent, config_hash};
  return c;
}

Digest save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  write_file_bytes(path, bytes);
  return sha256(bytes);
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file_bytes(path)); }

Digest checkpoint_hash(const Checkpoint& ckpt) { return sha256(serialize_checkpoint(ckpt)); }

Digest parameter_hash(const MicroTransformer& model) {
  Sha256 h;
  for (const auto& p : model.parameters()) {
    const auto d = p.value.data();
    h.update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(d.data()), d.size() * sizeof(double)));
  }
  return h.finish();
}

}  // namespace onelatent::model
