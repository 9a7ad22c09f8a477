#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "onelatent/pipeline/pipeline.hpp"
#include "onelatent/util/error.hpp"

using namespace onelatent;
using namespace onelatent::pipeline;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_config() {
  return nlohmann::json::parse(R"({
    "seed": 11,
    "data": {"train_count": 16, "eval_count": 4, "max_hops": 3},
    "render": {"width": 256, "height": 256, "padding": 8, "font_min": 6, "font_max": 24},
    "frontend": {"grid": 8, "sub_blocks": 4, "seed": 7},
    "model": {"d": 16, "layers": 1, "heads": 2, "max_seq_len": 160, "seed": 5},
    "stages": {"1": {"epochs": 1, "batch_size": 4}, "2": {"epochs": 1, "batch_size": 4},
               "3": {"epochs": 1, "batch_size": 4}},
    "eval": {"cot_budget": 40, "answer_budget": 4}
  })");
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const Log quiet = [](const std::string&) {};

}  // namespace

TEST_CASE("config parsing rejects unknown keys and bad values") {
  CHECK_NOTHROW(RunConfig::from_json(tiny_config(), "."));
  auto j = tiny_config();
  j["model"]["width"] = 3;
  CHECK_THROWS_AS(RunConfig::from_json(j, "."), ContractViolation);
  j = tiny_config();
  j["colour"] = true;
  CHECK_THROWS_AS(RunConfig::from_json(j, "."), ContractViolation);
  j = tiny_config();
  j["latent"] = {{"layer_source", "middle"}};
  CHECK_THROWS_AS(RunConfig::from_json(j, "."), ContractViolation);
  j = tiny_config();
  j["stages"]["2"]["batch_size"] = "eight";
  CHECK_THROWS_AS(RunConfig::from_json(j, "."), ContractViolation);
}

TEST_CASE("config hashes ignore paths and workers but follow upstream sections") {
  const auto a = RunConfig::from_json(tiny_config(), "/tmp/a");
  auto j = tiny_config();
  j["workers"] = 4;
  j["paths"] = {{"images", "elsewhere"}};
  const auto b = RunConfig::from_json(j, "/tmp/b");
  CHECK(a.data_hash() == b.data_hash());
  CHECK(a.stage_hash(3) == b.stage_hash(3));
  CHECK(a.targets_hash() == b.targets_hash());

  j = tiny_config();
  j["render"]["padding"] = 10;
  const auto c = RunConfig::from_json(j, "/tmp/a");
  CHECK(a.data_hash() == c.data_hash());
  CHECK(a.stage_hash(1) == c.stage_hash(1));
  CHECK(a.render_hash() != c.render_hash());
  CHECK(a.targets_hash() != c.targets_hash());
  CHECK(a.stage_hash(2) != c.stage_hash(2));

  j = tiny_config();
  j["data"]["train_count"] = 17;
  const auto d = RunConfig::from_json(j, "/tmp/a");
  CHECK(a.data_hash() != d.data_hash());
  CHECK(a.stage_hash(1) != d.stage_hash(1));

  j = tiny_config();
  j["stages"]["3"]["epochs"] = 2;
  const auto e = RunConfig::from_json(j, "/tmp/a");
  CHECK(a.stage_hash(2) == e.stage_hash(2));
  CHECK(a.stage_hash(3) != e.stage_hash(3));
}

TEST_CASE("config round trips through its JSON form") {
  const auto a = RunConfig::from_json(tiny_config(), "/x");
  const auto b = RunConfig::from_json(a.to_json(), "/x");
  CHECK(a.to_json().dump() == b.to_json().dump());
  CHECK(a.stage_hash(3) == b.stage_hash(3));
}

TEST_CASE("lineage sidecars detect edits and config drift") {
  TempDir dir("onelatent_lineage_test");
  const auto art = dir.path / "x.bin";
  std::ofstream(art) << "payload";
  const Digest cfg = sha256(std::string_view("cfg"));
  write_lineage(art, {"x", sha256_file(art), cfg, {{"up", "00"}}});
  const auto l = verify_lineage(art, "x", cfg);
  CHECK(l.upstream.at("up") == "00");
  CHECK_THROWS_AS(verify_lineage(art, "x", sha256(std::string_view("other"))), LineageError);
  std::ofstream(art) << "tampered";
  CHECK_THROWS_AS(verify_lineage(art, "x", cfg), LineageError);
  CHECK_THROWS_AS(verify_lineage(dir.path / "missing.bin", "missing", cfg), DependencyError);
}

TEST_CASE("steps refuse to run before their inputs exist") {
  TempDir dir("onelatent_dependency_test");
  const auto cfg = RunConfig::from_json(tiny_config(), dir.path);
  CHECK_THROWS_AS(render_corpus(cfg, quiet), DependencyError);
  CHECK_THROWS_AS(train(cfg, 1, quiet), DependencyError);
  gen_data(cfg, quiet);
  CHECK_THROWS_AS(extract_targets(cfg, quiet), DependencyError);
  try {
    train(cfg, 2, quiet);
    FAIL("stage 2 ran without targets");
  } catch (const DependencyError& e) {
    CHECK(e.artifact() == (dir.path / "targets/targets.olts").string());
  }
  CHECK_THROWS_AS(evaluate(cfg, eval::EvalMode::onelatent, std::nullopt, quiet), DependencyError);
  CHECK_THROWS_AS(report(cfg, quiet), DependencyError);
}

TEST_CASE("full pipeline runs, is reproducible and rejects stale upstreams") {
  TempDir dir("onelatent_pipeline_test");
  auto cfg = RunConfig::from_json(tiny_config(), dir.path / "a");
  auto run = [&](const RunConfig& c) {
    gen_data(c, quiet);
    render_corpus(c, quiet);
    train(c, 1, quiet);
    extract_targets(c, quiet);
    train(c, 2, quiet);
    train(c, 3, quiet);
    evaluate(c, eval::EvalMode::cot, std::nullopt, quiet);
    evaluate(c, eval::EvalMode::onelatent, std::nullopt, quiet);
    report(c, quiet);
  };
  run(cfg);
  auto cfg_b = cfg;
  cfg_b.base_dir = dir.path / "b";
  cfg_b.workers = 3;
  run(cfg_b);
  auto read = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(read(dir.path / "a/reports/summary.json") == read(dir.path / "b/reports/summary.json"));
  CHECK(read(checkpoint_path(cfg, 3)) == read(checkpoint_path(cfg_b, 3)));

  // Re-rendering hits the cache.
  const auto again = render_corpus(cfg, quiet);
  CHECK(again["cache_hits"] == 16);

  // A changed model section invalidates everything trained from stage 1.
  auto changed = cfg;
  changed.model.seed = 6;
  CHECK_THROWS_AS(train(changed, 2, quiet), LineageError);

  // Retraining stage 1 makes the stage-2 checkpoint stale for reporting.
  auto retrain = cfg;
  retrain.stages[0].epochs = 2;
  train(retrain, 1, quiet);
  CHECK_THROWS_AS(train(retrain, 2, quiet), LineageError);  // targets come from the old stage 1
  CHECK_THROWS_AS(report(cfg, quiet), LineageError);
}
