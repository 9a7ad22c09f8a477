// Acceptance run: one PASS/FAIL line per criterion, tolerances as specified.
//
//   acceptance [--known-fail N]... [--keep] [criterion ...]
//
// Without criterion arguments all nine run. The exit status is nonzero when
// any criterion fails, except those named with --known-fail: their FAIL line
// is printed unchanged but does not fail the process. Work directories live
// under the system temp dir and are removed unless --keep is given.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "fd.hpp"
#include "onelatent/eval/eval.hpp"
#include "onelatent/pipeline/pipeline.hpp"
#include "onelatent/util/error.hpp"
#include "onelatent/util/rng.hpp"
#include "oracles.hpp"
#include "paper_tables.hpp"
#include "stage_fixture.hpp"

using namespace onelatent;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path work_root() {
  static const fs::path root = fs::temp_directory_path() / ("onelatent_acceptance_" + std::to_string(::getpid()));
  return root;
}

int run_command(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

// ---- 1: metric arithmetic ----

Verdict metric_arithmetic() {
  int cells = 0, bad = 0;
  std::string first_bad;
  for (const auto* table : {&paper::method_comparison(), &paper::stage_ablation()}) {
    for (const auto& c : *table) {
      ++cells;
      const double got = eval::round_to(eval::otc(c.acc, c.out), c.decimals);
      if (std::abs(got - c.otc) > 0.01 + 1e-9) {
        if (bad++ == 0) first_bad = c.method + "/" + c.dataset;
      }
    }
  }
  int ratios = 0;
  for (const auto& c : paper::enhanced_compression()) {
    ++ratios;
    if (std::abs(eval::compression_ratio(c.co, c.no).cr - c.cr) > 0.1 + 1e-9) {
      if (bad++ == 0) first_bad = c.dataset;
    }
  }
  return {bad == 0, fmt("%d OTC cells within 0.01, %d compression ratios within 0.1%s", cells - (bad > 0 ? bad : 0), ratios,
                        bad ? (", first miss " + first_bad).c_str() : "")};
}

// ---- 2: gradient correctness ----

Verdict gradients() {
  double worst = 0;
  const int models = 20;
  for (int i = 0; i < models; ++i) {
    const auto m = fixture::make_micro(1000 + static_cast<std::uint64_t>(i));
    std::vector<numeric::Tensor> params;
    for (const auto& p : m.model.parameters()) params.push_back(p.value);
    for (int s : {1, 2, 3}) {
      curriculum::StageConfig cfg;
      cfg.stage = s;
      worst = std::max(worst, fdcheck::worst_relative_error(params, [&] {
                         return curriculum::stage_loss(m.batch(), m.model, cfg, m.lcfg, &m.targets).total_tensor;
                       }));
    }
    // The alignment term on its own.
    worst = std::max(worst, fdcheck::worst_relative_error(params, [&] {
                       std::vector<numeric::Tensor> terms;
                       for (const auto* e : m.batch()) {
                         const auto seq = latent::assemble(e->question, std::nullopt, e->answer, 2, m.lcfg);
                         const auto t = latent::fill_latents(seq, m.model, m.lcfg);
                         const auto& v = m.targets.at(e->sample_id);
                         terms.push_back(numeric::squared_distance(latent::read_alignment_state(t, seq),
                                                                   numeric::Tensor::from({1, v.size()}, v)));
                       }
                       return numeric::weighted_sum(terms, std::vector<double>(terms.size(), 0.5));
                     }));
  }
  return {worst < 1e-4, fmt("%d micro-models, NTP (stages 1, 3), MSE, stage-2 composite: worst relative error %.3g < 1e-4",
                            models, worst)};
}

// ---- 3: latent-filling equivalence ----

Verdict latent_filling() {
  Rng rng(31);
  int sequences = 0, mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 1 + static_cast<std::size_t>(i % 3);
    model::ModelConfig c;
    c.vocab_size = 16;
    c.d = 8 + 8 * static_cast<std::uint32_t>(rng.below(2));
    c.layers = 1 + static_cast<std::uint32_t>(rng.below(3));
    c.heads = 2;
    c.max_seq_len = 40;
    c.ff_mult = 2;
    c.rng_seed = rng.next_u64();
    const model::MicroTransformer m(c);
    latent::LatentConfig lc;
    lc.n_latents = n;
    lc.ids.begin_latent = 13;
    lc.ids.latent = 14;
    lc.ids.end_latent = 15;
    if (rng.coin()) {
      lc.layer_source = latent::LayerSource::block;
      lc.source_layer = rng.below(c.layers);
    }
    std::vector<int> q(1 + rng.below(12)), a(1 + rng.below(4));
    for (int& x : q) x = 4 + static_cast<int>(rng.below(9));
    for (int& x : a) x = 4 + static_cast<int>(rng.below(9));
    const auto seq = latent::assemble(q, std::nullopt, a, 2 + static_cast<int>(rng.below(2)), lc);
    const auto got = latent::fill_latents(seq, m, lc);
    const auto want = oracle::two_pass_fill(seq, m, lc);
    bool same = got.logits.numel() == want.logits.numel();
    for (std::size_t k = 0; same && k < got.logits.numel(); ++k) same = got.logits.at(k) == want.logits.at(k);
    for (std::size_t k = 0; same && k < got.final_hidden.numel(); ++k) {
      same = got.final_hidden.at(k) == want.final_hidden.at(k);
    }
    ++sequences;
    mismatches += same ? 0 : 1;
  }
  return {mismatches == 0, fmt("%d sequences (N = 1, 2, 3; final and block sources), %d not bit-identical", sequences,
                               mismatches)};
}

// ---- 4: renderer determinism and maximality ----

std::vector<std::string> fuzzed_cots(std::size_t count) {
  static const char* pieces[] = {"Every", "wumpus", "is", "not", "a", "so", "Alex", "the", "value", "=", "+", "-",
                                 "\\times", "\\leq", "\\geq", "\\div", "\\neq", "\\rightarrow", "\\cdot", "\\frac",
                                 "{", "}", "$", ".", ",", "####", "×", "→", "é", "中", "\t", "\n", "  "};
  Rng rng(404);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::string s;
    const auto words = 1 + rng.below(i % 10 == 0 ? 1500 : 250);
    for (std::uint64_t w = 0; w < words; ++w) {
      switch (rng.below(4)) {
        case 0: {
          const auto len = 1 + rng.below(rng.below(20) == 0 ? 150 : 12);
          for (std::uint64_t k = 0; k < len; ++k) s += static_cast<char>('!' + rng.below(94));
          break;
        }
        case 1: s += std::to_string(rng.below(100000)); break;
        default: s += pieces[rng.below(std::size(pieces))]; break;
      }
      s += rng.below(8) == 0 ? "" : " ";
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Child mode: render every fuzzed string and print one line per image with
// its pixel hash and layout, so two processes can be compared byte for byte.
int render_dump(const fs::path& out_path) {
  const render::RenderConfig cfg;
  std::ofstream out(out_path, std::ios::binary);
  for (const auto& raw : fuzzed_cots(500)) {
    const auto norm = render::normalize_cot(raw);
    if (norm.empty()) {
      out << "empty\n";
      continue;
    }
    try {
      const auto img = render::render(norm, cfg);
      out << to_hex(sha256(std::span<const std::uint8_t>(img.pixels))) << ' ' << img.layout.font_size << ' '
          << img.layout.padding << ' ' << img.layout.line_count << '\n';
    } catch (const OverflowError&) {
      out << "overflow\n";
    }
  }
  return out ? 0 : 1;
}

Verdict renderer(const std::string& self) {
  const auto dir = work_root() / "render";
  fs::create_directories(dir);
  for (const char* name : {"a.txt", "b.txt"}) {
    if (run_command(quote(self) + " --render-dump " + quote(dir / name)) != 0) return {false, "child render process failed"};
  }
  const auto a = read_file(dir / "a.txt"), b = read_file(dir / "b.txt");
  const bool identical = !a.empty() && a == b;

  const render::RenderConfig cfg;
  int checked = 0, not_max = 0, ink_escapes = 0, overflow = 0;
  std::istringstream lines(a);
  std::string line;
  for (const auto& raw : fuzzed_cots(500)) {
    std::getline(lines, line);
    const auto norm = render::normalize_cot(raw);
    if (norm.empty()) continue;
    ++checked;
    if (line == "overflow") {
      ++overflow;
      if (oracle::max_fitting_font(norm, cfg, cfg.padding_floor) != 0) ++not_max;
      continue;
    }
    const auto img = render::render(norm, cfg);
    if (img.layout.font_size != oracle::max_fitting_font(norm, cfg, img.layout.padding)) ++not_max;
    const int p = img.layout.padding;
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const bool inside = x >= p && x < img.width - p && y >= p && y < img.height - p;
        if (!inside && img.at(x, y) != 255) {
          ++ink_escapes;
          y = img.height;
          break;
        }
      }
    }
  }
  const bool pass = identical && checked == 500 && not_max == 0 && ink_escapes == 0;
  return {pass, fmt("%d strings, two processes %s, %d font choices off the exhaustive maximum, %d with ink outside the "
                    "padded box, %d overflow",
                    checked, identical ? "byte-identical" : "DIFFER", not_max, ink_escapes, overflow)};
}

// ---- 5: target pipeline integrity ----

Verdict target_pipeline() {
  taskgen::CorpusSpec spec;
  spec.count = 1000;
  spec.seed = 55;
  const auto corpus = taskgen::gen_corpus(spec);
  render::RenderConfig rc;
  rc.width = rc.height = 512;
  rc.padding = 12;
  rc.font_min = 8;
  rc.font_max = 32;
  targets::ReferenceFrontEndConfig fc;
  fc.d = 64;
  fc.seed = 7;
  const targets::ReferenceFrontEnd fe(fc);
  model::ModelConfig mc;
  mc.vocab_size = 8;
  mc.d = 64;
  mc.layers = 2;
  mc.heads = 4;
  mc.max_seq_len = 320;
  mc.rng_seed = 5;
  const model::MicroTransformer frozen(mc);
  const Digest frozen_hash = model::parameter_hash(frozen);

  targets::TargetStore store;
  store.d = 64;
  store.frozen_hash = frozen_hash;
  store.frontend_seed = fc.seed;
  std::map<std::string, std::string> cot_of;
  bool deterministic = true;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus[i];
    const auto norm = render::normalize_cot(s.cot);
    const auto img = render::render(norm, rc);
    auto v = targets::extract_target(img, fe, frozen, model::Tokenizer::kBos);
    if (i % 50 == 0) deterministic &= targets::extract_target(render::render(norm, rc), fe, frozen, model::Tokenizer::kBos) == v;
    store.add(s.sample_id, std::move(v));
    cot_of[s.sample_id] = norm;
  }

  double max_cos = -1;
  std::size_t pairs = 0;
  for (auto a = store.vectors.begin(); a != store.vectors.end(); ++a) {
    for (auto b = std::next(a); b != store.vectors.end(); ++b) {
      if (cot_of[a->first] == cot_of[b->first]) continue;
      max_cos = std::max(max_cos, targets::cosine_similarity(a->second, b->second));
      ++pairs;
    }
  }

  const auto path = work_root() / "targets.olts";
  fs::create_directories(work_root());
  targets::store_targets(store, path.string());
  const auto bytes = read_file(path);
  const auto back = targets::load_targets(path.string(), {64, frozen_hash, fc.seed});
  const auto again = targets::serialize_targets(back);
  const bool round_trip = back.vectors == store.vectors && std::string(again.begin(), again.end()) == bytes;

  int stale_fired = 0;
  auto other = frozen_hash;
  other[0] ^= 1;
  const targets::TargetExpectation stale[] = {{64, other, fc.seed}, {32, frozen_hash, fc.seed}, {64, frozen_hash, fc.seed + 1}};
  for (const auto& e : stale) {
    try {
      targets::load_targets(path.string(), e);
    } catch (const StaleTargetError&) {
      ++stale_fired;
    }
  }
  const bool pass = deterministic && round_trip && stale_fired == 3 && max_cos < 0.999;
  return {pass, fmt("1000 targets, extraction %s, store round trip %s, stale detection %d/3, max cosine over %zu distinct "
                    "pairs %.6f < 0.999",
                    deterministic ? "deterministic" : "NOT deterministic", round_trip ? "bit-exact" : "BROKEN",
                    stale_fired, pairs, max_cos)};
}

// ---- 6: curriculum end to end ----

Verdict curriculum_run(double& seconds_out) {
  const auto dir = work_root() / "desk";
  fs::create_directories(dir);
  const fs::path config = fs::path(ONELATENT_SOURCE_DIR) / "configs" / "desk.json";
  const std::string base = quote(ONELATENT_CLI_PATH) + " -q -c " + quote(config) + " -o " + quote(dir) + " ";
  const char* steps[] = {"gen-data",      "render",      "train --stage 1", "extract-targets",
                         "train --stage 2", "train --stage 3", "eval --mode cot", "eval --mode onelatent --stage 2",
                         "eval --mode onelatent --stage 3", "report"};
  const auto t0 = std::chrono::steady_clock::now();
  for (const char* step : steps) {
    if (run_command(base + step + " > " + quote(dir / "last_step.json")) != 0) {
      return {false, std::string("step '") + step + "' failed: " + read_file(dir / "last_step.json")};
    }
  }
  seconds_out = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto cfg = pipeline::RunConfig::load(config, dir);
  auto load = [&](eval::EvalMode m, int s) { return eval::report_from_json(read_file(pipeline::eval_report_path(cfg, m, s))); };
  const auto s1 = load(eval::EvalMode::cot, 1);
  const auto s2 = load(eval::EvalMode::onelatent, 2);
  const auto s3 = load(eval::EvalMode::onelatent, 3);

  // |answer| in tokens, per held-out sample.
  const auto held = taskgen::read_manifest((cfg.base_dir / cfg.paths.heldout).string());
  const auto ckpt = model::load_checkpoint(pipeline::checkpoint_path(cfg, 3).string());
  std::map<std::string, std::size_t> answer_len;
  for (const auto& s : held) answer_len[s.sample_id] = ckpt.state.tokenizer.encode(s.answer).size();
  std::size_t too_long = 0;
  for (const auto& r : s3.records) too_long += r.output_len > answer_len.at(r.sample_id) + 2 ? 1 : 0;

  const bool a = s2.avg_out <= 0.25 * s1.avg_out;
  const bool b = s3.accuracy >= s2.accuracy;
  const bool c = s3.accuracy >= 90.0 && too_long == 0;
  const bool time_ok = seconds_out <= 1800;
  return {a && b && c && time_ok,
          fmt("(a) stage-2 AvgOut %.2f vs stage-1 %.2f, ratio %.3f <= 0.25 %s; (b) stage-3 acc %.2f%% >= stage-2 %.2f%% %s; "
              "(c) stage-3 acc %.2f%% >= 90%% %s, %zu outputs longer than |answer|+2; wall %.0f s <= 1800 %s",
              s2.avg_out, s1.avg_out, s2.avg_out / s1.avg_out, a ? "ok" : "MISS", s3.accuracy, s2.accuracy, b ? "ok" : "MISS",
              s3.accuracy, s3.accuracy >= 90.0 ? "ok" : "MISS", too_long, seconds_out, time_ok ? "ok" : "MISS")};
}

// ---- 7: stage-loss contract ----

Verdict stage_loss_contract() {
  double worst = 0, worst_oracle = 0;
  int mse_in_1_3 = 0, missing_mse = 0;
  for (int i = 0; i < 50; ++i) {
    const auto m = fixture::make_micro(5000 + static_cast<std::uint64_t>(i), 1 + static_cast<std::size_t>(i % 4),
                                       1 + static_cast<std::size_t>(i % 3));
    curriculum::StageConfig cfg;
    cfg.stage = 2;
    cfg.lambda = 1.0;
    const auto l = curriculum::stage_loss(m.batch(), m.model, cfg, m.lcfg, &m.targets);
    if (!l.mse) {
      ++missing_mse;
      continue;
    }
    worst = std::max(worst, std::abs(l.total - (l.ntp + 1.0 * *l.mse)));
    const auto o = fixture::oracle_loss(m, 2);
    worst_oracle = std::max(worst_oracle, std::abs(l.total - (o.ntp + o.mse)) / std::max(1.0, std::abs(l.total)));
    for (int s : {1, 3}) {
      cfg.stage = s;
      mse_in_1_3 += curriculum::stage_loss(m.batch(), m.model, cfg, m.lcfg, &m.targets).mse ? 1 : 0;
    }
  }
  const bool pass = worst <= 1e-12 && missing_mse == 0 && mse_in_1_3 == 0 && worst_oracle <= 1e-12;
  return {pass, fmt("50 stage-2 batches: max |total - (ntp + 1.0*mse)| = %.3g <= 1e-12, max relative gap to the "
                    "recomputed loss %.3g; MSE present in stage 1/3: %d",
                    worst, worst_oracle, mse_in_1_3)};
}

// ---- 8: expansion loop contract ----

// Wraps an expander and records the CoT length it is handed each round.
class Recording : public taskgen::Expander {
 public:
  explicit Recording(const taskgen::Expander& inner) : inner_(inner) {}
  std::string id() const override { return "recording"; }
  std::string propose(const taskgen::Sample& s, const std::string& cot, int it) const override {
    seen.push_back(cot.size());
    return inner_.propose(s, cot, it);
  }
  mutable std::vector<std::size_t> seen;

 private:
  const taskgen::Expander& inner_;
};

Verdict expansion_loop() {
  const taskgen::ReferenceExpander ref;
  const taskgen::ReferenceJudge judge;
  Rng rng(88);
  int runs = 0, shrink = 0, answer_changed = 0, invalid = 0, over_k = 0, late_exit = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto s = i % 2 ? taskgen::gen_chain_task(rng.next_u64(), 1 + static_cast<int>(rng.below(16)))
                         : taskgen::gen_arith_task(rng.next_u64(), 1 + static_cast<int>(rng.below(6)));
    taskgen::ExpansionConfig cfg;
    cfg.max_iterations = 1 + static_cast<int>(rng.below(10));
    cfg.target_length = s.cot.size() + rng.below(4 * s.cot.size());
    Recording rec(ref);
    const auto r = taskgen::expand_cot(s, cfg, rec, judge);
    ++runs;
    // Lengths handed to the expander, then the final one, never decrease.
    auto lens = rec.seen;
    lens.push_back(r.sample.cot.size());
    for (std::size_t k = 1; k < lens.size(); ++k) shrink += lens[k] < lens[k - 1] ? 1 : 0;
    answer_changed += r.sample.answer != s.answer ? 1 : 0;
    invalid += judge.validate(s, r.sample.cot, s.answer) ? 0 : 1;
    over_k += r.iterations > cfg.max_iterations || static_cast<int>(rec.seen.size()) != r.iterations ? 1 : 0;
    // No round may start once the target is reached.
    for (auto len : rec.seen) late_exit += len >= cfg.target_length ? 1 : 0;
    if (r.iterations < cfg.max_iterations && r.sample.cot.size() < cfg.target_length) ++late_exit;
  }
  const bool pass = shrink == 0 && answer_changed == 0 && invalid == 0 && over_k == 0 && late_exit == 0;
  return {pass, fmt("%d runs: %d shrinking steps, %d answer changes, %d judge-invalid results, %d K-bound violations, "
                    "%d early-exit violations",
                    runs, shrink, answer_changed, invalid, over_k, late_exit)};
}

// ---- 9: pipeline reproducibility ----

Verdict reproducibility(double& seconds_out) {
  const fs::path config = fs::path(ONELATENT_SOURCE_DIR) / "configs" / "smoke.json";
  const char* steps[] = {"gen-data",        "render",          "extract-targets", "train --stage 1",
                         "extract-targets", "train --stage 2", "train --stage 3", "eval --mode cot",
                         "eval --mode onelatent", "report"};
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<fs::path> dirs;
  for (int run = 0; run < 2; ++run) {
    const auto dir = work_root() / ("smoke" + std::to_string(run));
    fs::remove_all(dir);
    fs::create_directories(dir);
    dirs.push_back(dir);
    const std::string base = quote(ONELATENT_CLI_PATH) + " -q -c " + quote(config) + " -o " + quote(dir) + " ";
    for (const char* step : steps) {
      const int rc = run_command(base + step + " > " + quote(dir / "last_step.json"));
      // The first extract-targets precedes stage 1 on purpose: it must refuse.
      if (std::string(step) == "extract-targets" && !fs::exists(dir / "checkpoints" / "stage1.olmc")) {
        if (rc != 4) return {false, "extract-targets before stage 1 did not fail with a dependency error"};
        continue;
      }
      if (rc != 0) return {false, std::string("step '") + step + "' failed: " + read_file(dir / "last_step.json")};
    }
  }
  seconds_out = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t compared = 0, differ = 0;
  for (const auto& e : fs::directory_iterator(dirs[0] / "reports")) {
    const auto name = e.path().filename().string();
    if (name.starts_with("metrics_")) continue;  // wall-clock timings
    ++compared;
    if (read_file(e.path()) != read_file(dirs[1] / "reports" / name)) ++differ;
  }
  const bool pass = compared > 0 && differ == 0 && seconds_out <= 300;
  return {pass, fmt("two smoke runs, %zu report files compared, %zu differ; wall %.1f s <= 300", compared, differ,
                    seconds_out)};
}

}  // namespace

int main(int argc, char** argv) {
  bool keep = false;
  std::set<int> selected, known_fail;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--render-dump" && i + 1 < argc) return render_dump(argv[i + 1]);
    if (a == "--known-fail" && i + 1 < argc) {
      known_fail.insert(std::stoi(argv[++i]));
    } else if (a == "--keep") {
      keep = true;
    } else {
      selected.insert(std::stoi(a));
    }
  }
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const std::string self = fs::canonical("/proc/self/exe").string();

  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // runtime bound; the curriculum and smoke runs time themselves
    std::function<Verdict(double&)> run;
  };
  const std::vector<Criterion> all{
      {1, "metric arithmetic", 1, [](double&) { return metric_arithmetic(); }},
      {2, "gradient correctness", 120, [](double&) { return gradients(); }},
      {3, "latent-filling equivalence", 60, [](double&) { return latent_filling(); }},
      {4, "renderer determinism + maximality", 120, [&](double&) { return renderer(self); }},
      {5, "target pipeline integrity", 180, [](double&) { return target_pipeline(); }},
      {6, "curriculum end-to-end", 0, [](double& s) { return curriculum_run(s); }},
      {7, "stage-loss contract", 60, [](double&) { return stage_loss_contract(); }},
      {8, "expansion loop contract", 60, [](double&) { return expansion_loop(); }},
      {9, "pipeline reproducibility", 0, [](double& s) { return reproducibility(s); }},
  };

  int failed = 0, ran = 0, unexpected = 0;
  for (const auto& c : all) {
    if (!selected.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    double own_seconds = 0;
    try {
      v = c.run(own_seconds);
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs > c.limit_s) {
      v.pass = false;
      v.detail += fmt("; runtime %.1f s over the %.0f s bound", secs, c.limit_s);
    }
    ++ran;
    failed += v.pass ? 0 : 1;
    unexpected += v.pass || known_fail.contains(c.id) ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << v.detail
              << fmt(" (%.1f s)", secs) << (!v.pass && known_fail.contains(c.id) ? " [known failure, see README]" : "")
              << std::endl;
  }
  std::cout << fmt("%d/%d criteria passed", ran - failed, ran) << std::endl;
  if (!keep) fs::remove_all(work_root());
  return unexpected > 0 ? 1 : 0;
}
