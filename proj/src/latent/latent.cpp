#include "onelatent/latent/latent.hpp"

#include <algorithm>
#include <string>

#include "onelatent/numeric/ops.hpp"
#include "onelatent/util/error.hpp"

namespace onelatent::latent {

namespace nm = onelatent::numeric;

void LatentConfig::validate() const {
  const int specials[] = {ids.begin_latent, ids.latent, ids.end_latent};
  for (int s : specials) {
    if (s < 0) throw ContractViolation("LatentConfig: latent special tokens are not registered");
  }
  if (ids.begin_latent == ids.latent || ids.latent == ids.end_latent || ids.begin_latent == ids.end_latent) {
    throw ContractViolation("LatentConfig: latent special tokens must be distinct");
  }
  for (int base : {ids.pad, ids.bos, ids.eos}) {
    if (std::find(std::begin(specials), std::end(specials), base) != std::end(specials)) {
      throw ContractViolation("LatentConfig: latent tokens collide with BOS/EOS/PAD");
    }
  }
}

SpecialIds special_ids(const model::Tokenizer& tok) {
  SpecialIds ids;
  ids.begin_latent = tok.id(model::kBeginLatent);
  ids.latent = tok.id(model::kLatent);
  ids.end_latent = tok.id(model::kEndLatent);
  return ids;
}

std::size_t AssembledSequence::begin_latent_position() const {
  std::size_t found = ids.size();
  std::size_t count = 0;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == Role::begin_latent) {
      found = i;
      ++count;
    }
  }
  if (count != 1) {
    throw ContractViolation("sequence must contain exactly one begin-latent token, found " + std::to_string(count));
  }
  return found;
}

AssembledSequence assemble(std::span<const int> question, std::optional<std::span<const int>> cot,
                           std::span<const int> answer, int stage, const LatentConfig& cfg) {
  cfg.validate();
  if (stage < 1 || stage > 3) throw ContractViolation("assemble: stage must be 1, 2 or 3");
  if (stage == 1 && !cot) throw ContractViolation("assemble: stage 1 requires CoT tokens");
  if (stage != 1 && cot) throw ContractViolation("assemble: stages 2 and 3 must not receive CoT tokens");
  AssembledSequence s;
  s.stage = stage;
  auto push = [&s](int id, Role role, bool target) {
    s.ids.push_back(id);
    s.roles.push_back(role);
    s.supervised.push_back(target);
  };
  push(cfg.ids.bos, Role::bos, false);
  for (int q : question) push(q, Role::question, false);
  push(cfg.ids.begin_latent, Role::begin_latent, false);
  if (stage != 1) {
    for (std::size_t i = 0; i < cfg.n_latents; ++i) {
      s.latent_positions.push_back(s.ids.size());
      push(cfg.ids.latent, Role::latent, false);
    }
  }
  push(cfg.ids.end_latent, Role::end_latent, false);
  if (stage == 1) {
    for (int r : *cot) push(r, Role::cot, true);
  }
  for (int a : answer) push(a, Role::answer, true);
  push(cfg.ids.eos, Role::eos, true);
  return s;
}

Decomposed decompose(const AssembledSequence& seq) {
  Decomposed d;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    switch (seq.roles[i]) {
      case Role::question: d.question.push_back(seq.ids[i]); break;
      case Role::cot: d.cot.push_back(seq.ids[i]); break;
      case Role::answer: d.answer.push_back(seq.ids[i]); break;
      default: break;
    }
  }
  return d;
}

ForwardTrace fill_latents(const AssembledSequence& seq, const MicroTransformer& model, const LatentConfig& cfg) {
  if (model.vocab_size() == 0) throw ContractViolation("fill_latents: model has no vocabulary");
  std::vector<std::size_t> lat = seq.latent_positions;
  std::sort(lat.begin(), lat.end());
  if (!lat.empty() && lat.front() == 0) {
    throw ContractViolation("fill_latents: latent slot at position 0 has no predecessor");
  }
  if (cfg.layer_source == LayerSource::block && cfg.source_layer >= model.config().layers) {
    throw ContractViolation("fill_latents: source layer out of range");
  }
  const bool keep_layers = cfg.layer_source == LayerSource::block;
  model::ForwardSession session(model, keep_layers);
  const std::span<const int> ids(seq.ids);
  std::size_t start = 0;
  model::ChunkOutput last;
  model::Overrides pending;
  for (std::size_t l : lat) {
    if (l > start) {
      last = session.extend(ids.subspan(start, l - start), pending);
      pending.clear();
      start = l;
    }
    const Tensor& src = keep_layers ? last.layer_hiddens[cfg.source_layer] : last.final_hidden;
    Tensor h = nm::slice_rows(src, src.rows() - 1, src.rows());
    if (cfg.stop_gradient) h = h.detach();
    pending.emplace(l, h);
  }
  if (start < ids.size()) {
    session.extend(ids.subspan(start), pending);
  }
  return session.trace();
}

Tensor read_alignment_state(const ForwardTrace& trace, const AssembledSequence& seq) {
  const std::size_t pos = seq.begin_latent_position();
  return nm::slice_rows(trace.final_hidden, pos, pos + 1);
}

}  // namespace onelatent::latent
