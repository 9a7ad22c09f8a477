#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "onelatent/curriculum/curriculum.hpp"
#include "onelatent/eval/eval.hpp"
#include "onelatent/latent/latent.hpp"
#include "onelatent/model/transformer.hpp"
#include "onelatent/render/render.hpp"
#include "onelatent/targets/targets.hpp"
#include "onelatent/taskgen/taskgen.hpp"

// Config-driven orchestration behind the command-line tool. Every artifact is
// written next to a "<artifact>.lineage.json" sidecar holding its SHA-256, the
// hash of the config sections that produced it, and the hashes of its inputs.
namespace onelatent::pipeline {

struct Paths {
  std::filesystem::path corpus, heldout, images, targets, checkpoints, reports;
};

struct DataConfig {
  taskgen::TaskKind kind = taskgen::TaskKind::chain;
  std::size_t train_count = 200;
  std::size_t eval_count = 50;
  int min_hops = 1;
  int max_hops = 8;
  int distractors = 2;
  bool branching = true;
  std::size_t vocab_size = 40;
};

struct FrontEndConfig {
  std::size_t grid = 16;
  std::size_t sub_blocks = 8;
  double scale = 8.0;
  std::uint64_t seed = 7;
  bool global_context = true;
};

struct ModelSection {
  std::uint32_t d = 64;
  std::uint32_t layers = 2;
  std::uint32_t heads = 4;
  std::uint32_t max_seq_len = 320;
  std::uint32_t ff_mult = 4;
  std::uint64_t seed = 5;
};

struct EvalSection {
  std::size_t cot_budget = 96;
  std::size_t answer_budget = 8;
  bool count_latent = true;
  bool count_eos = true;
  std::string marker = "####";
};

struct RunConfig {
  std::filesystem::path base_dir;  // relative paths resolve here
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  Paths paths;
  DataConfig data;
  render::RenderConfig render;
  FrontEndConfig frontend;
  ModelSection model;
  std::size_t n_latents = 1;
  std::string layer_source = "final";
  std::size_t source_layer = 0;
  bool stop_gradient = false;
  curriculum::StageConfig stages[3];
  EvalSection eval;

  // Parses the documented JSON schema; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path, const std::optional<std::filesystem::path>& out_dir = {});
  nlohmann::ordered_json to_json() const;

  const curriculum::StageConfig& stage(int s) const { return stages[s - 1]; }

  // Cumulative hashes: each covers the sections of its own step and all of
  // its upstream steps.
  Digest data_hash() const;
  Digest render_hash() const;
  Digest stage_hash(int stage) const;
  Digest targets_hash() const;
  Digest eval_hash(eval::EvalMode mode, int stage) const;
};

struct Lineage {
  std::string artifact;
  Digest sha{};
  Digest config_hash{};
  std::map<std::string, std::string> upstream;  // artifact name -> sha hex
};

void write_lineage(const std::filesystem::path& artifact, const Lineage& l);
// Reads the sidecar, checks the artifact bytes against it and the recorded
// config hash against `expected_config`. DependencyError when the artifact is
// missing, LineageError on any mismatch.
Lineage verify_lineage(const std::filesystem::path& artifact, const std::string& name, const Digest& expected_config);

using Log = std::function<void(const std::string&)>;

// Subcommands. Each returns a JSON summary for standard output.
nlohmann::ordered_json gen_data(const RunConfig& cfg, const Log& log);
nlohmann::ordered_json render_corpus(const RunConfig& cfg, const Log& log);
nlohmann::ordered_json extract_targets(const RunConfig& cfg, const Log& log);
nlohmann::ordered_json train(const RunConfig& cfg, int stage, const Log& log);
nlohmann::ordered_json evaluate(const RunConfig& cfg, eval::EvalMode mode, std::optional<int> stage, const Log& log);
nlohmann::ordered_json report(const RunConfig& cfg, const Log& log);

std::filesystem::path checkpoint_path(const RunConfig& cfg, int stage);
std::filesystem::path eval_report_path(const RunConfig& cfg, eval::EvalMode mode, int stage);

// Writes the resolved config next to a step's outputs.
void write_config_snapshot(const RunConfig& cfg, const std::filesystem::path& dir, const std::string& step);

}  // namespace onelatent::pipeline
