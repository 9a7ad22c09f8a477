#include "onelatent/curriculum/curriculum.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "onelatent/numeric/ops.hpp"
#include "onelatent/numeric/optim.hpp"
#include "onelatent/util/error.hpp"
#include "onelatent/util/rng.hpp"

namespace onelatent::curriculum {

namespace nm = numeric;

void StageConfig::validate() const {
  if (stage < 1 || stage > 3) throw ContractViolation("StageConfig: stage must be 1, 2 or 3");
  if (epochs < 0) throw ContractViolation("StageConfig: negative epoch count");
  if (!(learning_rate > 0)) throw ContractViolation("StageConfig: learning rate must be positive");
  if (batch_size == 0 || grad_accum == 0) throw ContractViolation("StageConfig: batch size and accumulation must be >= 1");
  if (lambda < 0) throw ContractViolation("StageConfig: lambda must be non-negative");
}

std::vector<Example> encode_examples(const std::vector<taskgen::Sample>& samples, const model::Tokenizer& tok) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back({s.sample_id, tok.encode(s.question), tok.encode(s.cot), tok.encode(s.answer)});
  }
  return out;
}

LossBreakdown stage_loss(const std::vector<const Example*>& batch, const model::MicroTransformer& model,
                         const StageConfig& cfg, const latent::LatentConfig& lcfg,
                         const targets::TargetStore* targets) {
  cfg.validate();
  if (batch.empty()) throw ContractViolation("stage_loss: empty batch");
  if (cfg.stage == 2 && targets == nullptr) throw ContractViolation("stage_loss: stage 2 needs the target store");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<nm::Tensor> ntp_terms, mse_terms;
  for (const Example* ex : batch) {
    std::optional<std::span<const int>> cot;
    if (cfg.stage == 1) cot = std::span<const int>(ex->cot);
    const auto seq = latent::assemble(ex->question, cot, ex->answer, cfg.stage, lcfg);
    const auto trace = latent::fill_latents(seq, model, lcfg);
    // Position p is predicted by the logits at p-1.
    std::vector<std::size_t> rows;
    std::vector<int> tgt;
    for (std::size_t p = 1; p < seq.size(); ++p) {
      if (seq.supervised[p]) {
        rows.push_back(p - 1);
        tgt.push_back(seq.ids[p]);
      }
    }
    ntp_terms.push_back(nm::cross_entropy_sum(trace.logits, rows, tgt));
    if (cfg.stage == 2) {
      if (!targets->contains(ex->sample_id)) {
        throw ContractViolation("stage_loss: no target for sample " + ex->sample_id);
      }
      const auto& v = targets->at(ex->sample_id);
      if (v.size() != model.hidden_dim()) throw ContractViolation("stage_loss: target dimension != model d");
      const auto h = latent::read_alignment_state(trace, seq);
      mse_terms.push_back(nm::squared_distance(h, nm::Tensor::from({1, v.size()}, v)));
    }
  }
  const std::vector<double> w(batch.size(), inv_b);
  LossBreakdown out;
  const auto ntp = nm::weighted_sum(ntp_terms, w);
  out.ntp = ntp.item();
  if (cfg.stage == 2) {
    const auto mse = nm::weighted_sum(mse_terms, w);
    out.mse = mse.item();
    const std::vector<double> mix{1.0, cfg.lambda};
    out.total_tensor = nm::weighted_sum({ntp, mse}, mix);
  } else {
    out.total_tensor = ntp;
  }
  out.total = out.total_tensor.item();
  if (!std::isfinite(out.total)) throw NumericFault("stage_loss", "non-finite loss");
  return out;
}

void init_special_tokens(model::ModelState& state) {
  auto& tok = state.tokenizer;
  for (auto t : {model::kBeginLatent, model::kLatent, model::kEndLatent}) {
    if (tok.id(t) >= 0) throw ContractViolation("init_special_tokens: " + std::string(t) + " already present");
  }
  auto& m = state.model;
  if (tok.size() != m.vocab_size()) throw ContractViolation("init_special_tokens: tokenizer and model disagree on vocab");
  const std::size_t V = m.vocab_size(), d = m.hidden_dim();
  std::vector<double> emb_mean(d, 0.0), col_mean(d, 0.0);
  double bias_mean = 0.0;
  const auto emb = m.token_embedding().data();
  const auto hw = m.output_weight().data();  // [d, V]
  const auto hb = m.output_bias().data();
  for (std::size_t r = 0; r < V; ++r) {
    for (std::size_t j = 0; j < d; ++j) emb_mean[j] += emb[r * d + j];
    bias_mean += hb[r];
  }
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t r = 0; r < V; ++r) col_mean[j] += hw[j * V + r];
  }
  for (std::size_t j = 0; j < d; ++j) {
    emb_mean[j] /= static_cast<double>(V);
    col_mean[j] /= static_cast<double>(V);
  }
  bias_mean /= static_cast<double>(V);
  m.append_tokens({emb_mean, emb_mean, emb_mean}, {col_mean, col_mean, col_mean}, {bias_mean, bias_mean, bias_mean});
  tok.add_token(std::string(model::kBeginLatent));
  tok.add_token(std::string(model::kLatent));
  tok.add_token(std::string(model::kEndLatent));
}

std::string metrics_jsonl(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["stage"] = m.stage;
  j["epoch"] = m.epoch;
  j["ntp"] = m.ntp;
  j["mse"] = m.mse ? nlohmann::ordered_json(*m.mse) : nlohmann::ordered_json(nullptr);
  j["val_acc"] = m.val_acc ? nlohmann::ordered_json(*m.val_acc) : nlohmann::ordered_json(nullptr);
  j["val_avg_out"] = m.val_avg_out ? nlohmann::ordered_json(*m.val_avg_out) : nlohmann::ordered_json(nullptr);
  j["val_otc"] = m.val_otc ? nlohmann::ordered_json(*m.val_otc) : nlohmann::ordered_json(nullptr);
  j["wall_ms"] = m.wall_ms;
  return j.dump() + "\n";
}

StageResult run_stage(const std::vector<Example>& examples, model::ModelState& state, const StageConfig& cfg,
                      const latent::LatentConfig& lcfg, const targets::TargetStore* targets, const RunOptions& opts) {
  cfg.validate();
  lcfg.validate();
  if (cfg.stage == 2) {
    if (targets == nullptr) throw DependencyError("stage 2 needs a target store", "targets");
    if (targets->d != state.model.hidden_dim()) {
      throw StaleTargetError("target store d=" + std::to_string(targets->d) + " does not match model d=" +
                             std::to_string(state.model.hidden_dim()));
    }
  }
  const targets::TargetStore* used_targets = cfg.stage == 2 ? targets : nullptr;

  auto params = state.model.parameters();
  nm::AdamW opt(params, {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::ofstream metrics;
  if (!opts.metrics_path.empty()) {
    const auto parent = std::filesystem::path(opts.metrics_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    metrics.open(opts.metrics_path, std::ios::app);
  }

  StageResult result;
  const double accum_scale = 1.0 / static_cast<double>(cfg.grad_accum);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(cfg.stage) * 100000 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double ntp_sum = 0, mse_sum = 0;
    std::size_t batches = 0, pending = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<const Example*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) batch.push_back(&examples[order[i]]);
      const auto loss = stage_loss(batch, state.model, cfg, lcfg, used_targets);
      const auto scaled = cfg.grad_accum == 1 ? loss.total_tensor : nm::scale(loss.total_tensor, accum_scale);
      scaled.backward();
      ntp_sum += loss.ntp;
      mse_sum += loss.mse.value_or(0.0);
      ++batches;
      if (++pending == cfg.grad_accum) {
        opt.step();
        opt.zero_grad();
        pending = 0;
      }
    }
    if (pending > 0) {
      opt.step();
      opt.zero_grad();
    }

    EpochMetrics em;
    em.stage = cfg.stage;
    em.epoch = epoch;
    em.ntp = batches ? ntp_sum / static_cast<double>(batches) : 0.0;
    if (cfg.stage == 2) em.mse = batches ? mse_sum / static_cast<double>(batches) : 0.0;
    if (cfg.eval_every_epoch && opts.validator) {
      const auto v = opts.validator(state);
      em.val_acc = v.accuracy;
      em.val_avg_out = v.avg_out;
      em.val_otc = v.otc;
    }
    em.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (!opts.checkpoint_dir.empty()) {
      model::Checkpoint ck{{state.tokenizer, state.model.clone()}, static_cast<std::uint8_t>(cfg.stage), opts.parent, opts.config_hash};
      model::save_checkpoint(ck, opts.checkpoint_dir + "/stage" + std::to_string(cfg.stage) + "_epoch" +
                                     std::to_string(epoch) + ".olmc");
    }
    if (metrics.is_open()) metrics << metrics_jsonl(em) << std::flush;
    if (opts.progress) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "stage %d epoch %d/%d ntp %.4f%s", cfg.stage, epoch, cfg.epochs, em.ntp,
                    em.mse ? (" mse " + std::to_string(*em.mse)).c_str() : "");
      std::string line = buf;
      if (em.val_acc) line += " val_acc " + std::to_string(*em.val_acc) + " val_out " + std::to_string(*em.val_avg_out);
      opts.progress(line);
    }
    result.epochs.push_back(em);
  }
  result.final_checkpoint = model::Checkpoint{{state.tokenizer, state.model.clone()}, static_cast<std::uint8_t>(cfg.stage),
                                             opts.parent, opts.config_hash};
  result.final_hash = model::checkpoint_hash(*result.final_checkpoint);
  return result;
}

void check_lineage(const model::Checkpoint& ckpt, int expected_stage, const std::optional<Digest>& expected_hash) {
  if (ckpt.stage != expected_stage) {
    throw LineageError("expected a stage " + std::to_string(expected_stage) + " checkpoint, found stage " +
                       std::to_string(ckpt.stage));
  }
  if (expected_hash) {
    const auto h = model::checkpoint_hash(ckpt);
    if (h != *expected_hash) {
      throw LineageError("checkpoint hash " + to_hex(h) + " does not match the recorded " + to_hex(*expected_hash));
    }
  }
}

}  // namespace onelatent::curriculum
