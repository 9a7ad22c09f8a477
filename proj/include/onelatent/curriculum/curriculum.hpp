#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "onelatent/latent/latent.hpp"
#include "onelatent/model/checkpoint.hpp"
#include "onelatent/targets/targets.hpp"
#include "onelatent/taskgen/taskgen.hpp"

namespace onelatent::curriculum {

struct StageConfig {
  int stage = 1;
  int epochs = 15;
  double learning_rate = 3e-4;  // desk-scale profile; the paper profile is 2e-5
  std::string lr_profile = "desk";
  double lambda = 1.0;  // MSE weight, stage 2 only
  std::size_t batch_size = 8;
  std::size_t grad_accum = 1;
  double weight_decay = 0.01;
  bool eval_every_epoch = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// Token ids of one sample. Stages 2-3 never look at `cot`.
struct Example {
  std::string sample_id;
  std::vector<int> question, cot, answer;
};

std::vector<Example> encode_examples(const std::vector<taskgen::Sample>& samples, const model::Tokenizer& tok);

struct LossBreakdown {
  double ntp = 0;
  std::optional<double> mse;
  double total = 0;
  numeric::Tensor total_tensor;  // differentiable total
};

// NTP summed over supervised positions and averaged over the batch; in stage
// 2 the squared L2 distance between the begin-latent hidden state and the
// target, averaged over the batch, is added with weight lambda.
LossBreakdown stage_loss(const std::vector<const Example*>& batch, const model::MicroTransformer& model,
                         const StageConfig& cfg, const latent::LatentConfig& lcfg,
                         const targets::TargetStore* targets = nullptr);

// Appends the three latent tokens to the tokenizer and model. Their input
// rows (and output columns / bias) are the mean of the existing ones.
void init_special_tokens(model::ModelState& state);

struct EpochMetrics {
  int stage = 0;
  int epoch = 0;
  double ntp = 0;
  std::optional<double> mse;
  std::optional<double> val_acc, val_avg_out, val_otc;
  double wall_ms = 0;
};

std::string metrics_jsonl(const EpochMetrics& m);

struct ValidationResult {
  double accuracy = 0, avg_out = 0, otc = 0;
};
using Validator = std::function<ValidationResult(const model::ModelState&)>;

struct RunOptions {
  std::string checkpoint_dir;  // empty: no per-epoch checkpoints
  std::string metrics_path;    // empty: no metrics log
  Digest parent{};
  Digest config_hash{};
  Validator validator;
  std::function<void(const std::string&)> progress;
};

struct StageResult {
  std::vector<EpochMetrics> epochs;
  std::optional<model::Checkpoint> final_checkpoint;
  Digest final_hash{};
};

// Seeded shuffled epochs over `examples`; optimizer state is fresh per stage.
StageResult run_stage(const std::vector<Example>& examples, model::ModelState& state, const StageConfig& cfg,
                      const latent::LatentConfig& lcfg, const targets::TargetStore* targets, const RunOptions& opts);

// Throws LineageError unless `ckpt` is a stage `expected_stage` checkpoint
// whose hash equals `expected_hash` (when given).
void check_lineage(const model::Checkpoint& ckpt, int expected_stage, const std::optional<Digest>& expected_hash = {});

}  // namespace onelatent::curriculum
