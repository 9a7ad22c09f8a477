// Command-line entry point. Results go to stdout as one JSON object; progress
// goes to stderr. Failures print {"error": {...}} to stdout and exit nonzero.
#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "onelatent/pipeline/pipeline.hpp"
#include "onelatent/util/error.hpp"

namespace fs = std::filesystem;
using namespace onelatent;

namespace {

enum Exit { kOk = 0, kUsage = 2, kContract = 3, kDependency = 4, kLineage = 5, kStale = 6, kOverflow = 7, kFormat = 8, kNumeric = 9, kOther = 1 };

int fail(const std::string& type, const std::string& message, int code, const std::string& artifact = {}) {
  nlohmann::ordered_json j;
  j["error"]["type"] = type;
  j["error"]["message"] = message;
  if (!artifact.empty()) j["error"]["artifact"] = artifact;
  std::cout << j.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OneLatent desk-scale pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir;
  bool quiet = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  app.add_option("-c,--config", config_path, "run config (JSON); defaults to $ONELATENT_CONFIG");
  app.add_option("-o,--out-dir", out_dir, "resolve relative artifact paths here instead of next to the config");
  app.add_option("--seed", seed, "override the global seed");
  app.add_option("--workers", workers, "worker threads for render, extract-targets and eval")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", quiet, "no progress on stderr");

  auto* gen = app.add_subcommand("gen-data", "generate the training and held-out corpora");
  auto* ren = app.add_subcommand("render", "render training CoTs to images");
  auto* ext = app.add_subcommand("extract-targets", "encode images through the frozen stage-1 model");
  auto* trn = app.add_subcommand("train", "run one curriculum stage");
  int stage = 0;
  trn->add_option("--stage", stage, "1, 2 or 3")->required()->check(CLI::Range(1, 3));
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on the held-out corpus");
  std::string mode;
  std::optional<int> eval_stage;
  evl->add_option("--mode", mode, "nocot, cot or onelatent")->required()->check(CLI::IsMember({"nocot", "cot", "onelatent"}));
  evl->add_option("--stage", eval_stage, "checkpoint stage (default: 1 for cot, 3 otherwise)")->check(CLI::Range(1, 3));
  auto* rep = app.add_subcommand("report", "summarize eval reports per stage");
  auto* show = app.add_subcommand("show-config", "print the resolved config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what(), kUsage);
  }

  const pipeline::Log log = [quiet](const std::string& line) {
    if (!quiet) std::cerr << line << std::endl;
  };

  try {
    if (config_path.empty()) {
      if (const char* env = std::getenv("ONELATENT_CONFIG")) config_path = env;
    }
    if (config_path.empty()) return fail("UsageError", "no config: pass --config or set ONELATENT_CONFIG", kUsage);
    std::optional<fs::path> od;
    if (!out_dir.empty()) od = fs::absolute(out_dir);
    auto cfg = pipeline::RunConfig::load(config_path, od);
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;

    nlohmann::ordered_json out;
    if (*gen) out = pipeline::gen_data(cfg, log);
    else if (*ren) out = pipeline::render_corpus(cfg, log);
    else if (*ext) out = pipeline::extract_targets(cfg, log);
    else if (*trn) out = pipeline::train(cfg, stage, log);
    else if (*evl) out = pipeline::evaluate(cfg, eval::parse_mode(mode), eval_stage, log);
    else if (*rep) out = pipeline::report(cfg, log);
    else if (*show) out = cfg.to_json();
    std::cout << out.dump() << std::endl;
    return kOk;
  } catch (const DependencyError& e) {
    return fail("DependencyError", e.what(), kDependency, e.artifact());
  } catch (const LineageError& e) {
    return fail("LineageError", e.what(), kLineage);
  } catch (const StaleTargetError& e) {
    return fail("StaleTargetError", e.what(), kStale);
  } catch (const OverflowError& e) {
    return fail("OverflowError", e.what(), kOverflow);
  } catch (const FormatError& e) {
    return fail("FormatError", e.what(), kFormat);
  } catch (const NumericFault& e) {
    return fail("NumericFault", e.what(), kNumeric);
  } catch (const ContractViolation& e) {
    return fail("ContractViolation", e.what(), kContract);
  } catch (const std::exception& e) {
    return fail("Error", e.what(), kOther);
  }
}
