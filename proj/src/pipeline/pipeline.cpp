#include "onelatent/pipeline/pipeline.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "onelatent/util/binio.hpp"
#include "onelatent/util/error.hpp"
#include "onelatent/util/rng.hpp"

namespace onelatent::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// Reads known keys out of a JSON object and rejects anything left over, so a
// misspelled key fails loudly instead of silently using a default.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j.is_object()) throw ContractViolation("config: section '" + name_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ContractViolation("config: unknown key '" + name_ + "." + k + "'");
    }
  }
  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ContractViolation("config: bad value for '" + name_ + "." + key + "': " + e.what());
    }
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void get_path(Section& s, const char* key, fs::path& out) {
  std::string v = out.string();
  s.get(key, v);
  out = v;
}

ojson stage_json(const curriculum::StageConfig& c) {
  ojson j;
  j["epochs"] = c.epochs;
  j["learning_rate"] = c.learning_rate;
  j["lr_profile"] = c.lr_profile;
  j["lambda"] = c.lambda;
  j["batch_size"] = c.batch_size;
  j["grad_accum"] = c.grad_accum;
  j["weight_decay"] = c.weight_decay;
  j["eval_every_epoch"] = c.eval_every_epoch;
  j["seed"] = c.seed;
  return j;
}

ojson sections(const RunConfig& c, const char* name) {
  const auto all = c.to_json();
  return all.at(name);
}

Digest chain_hash(const Digest& upstream, const std::string& label, const ojson& section) {
  Sha256 h;
  h.update(std::span<const std::uint8_t>(upstream));
  h.update(label);
  h.update(section.dump());
  return h.finish();
}

fs::path resolve(const RunConfig& c, const fs::path& p) { return p.is_absolute() ? p : c.base_dir / p; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path lineage_path(const fs::path& artifact) { return fs::path(artifact.string() + ".lineage.json"); }

void require(const fs::path& path, const std::string& what, const std::string& hint) {
  if (!fs::exists(path)) {
    throw DependencyError(what + " not found at " + path.string() + "; run '" + hint + "' first", path.string());
  }
}

latent::LatentConfig latent_config(const RunConfig& c, const model::Tokenizer& tok) {
  latent::LatentConfig l;
  l.n_latents = c.n_latents;
  l.ids = latent::special_ids(tok);
  l.layer_source = c.layer_source == "final" ? latent::LayerSource::final_layer : latent::LayerSource::block;
  l.source_layer = c.source_layer;
  l.stop_gradient = c.stop_gradient;
  return l;
}

targets::ReferenceFrontEnd front_end(const RunConfig& c) {
  targets::ReferenceFrontEndConfig f;
  f.grid = c.frontend.grid;
  f.sub_blocks = c.frontend.sub_blocks;
  f.d = c.model.d;
  f.seed = c.frontend.seed;
  f.scale = c.frontend.scale;
  f.global_context = c.frontend.global_context;
  return targets::ReferenceFrontEnd(f);
}

std::string image_name(const std::string& sample_id) { return sample_id + ".png"; }

eval::EvalConfig eval_config(const RunConfig& c, eval::EvalMode mode) {
  eval::EvalConfig e;
  e.mode = mode;
  e.n_latents = c.n_latents;
  e.decode_budget = mode == eval::EvalMode::cot ? c.eval.cot_budget : c.eval.answer_budget;
  auto norm = eval::normalizer_for(c.data.kind);
  norm.marker = c.eval.marker;
  e.normalizer = norm;
  e.count_latent = c.eval.count_latent;
  e.count_eos = c.eval.count_eos;
  e.workers = c.workers;
  return e;
}

std::string checkpoint_name(int stage) { return "stage" + std::to_string(stage); }

}  // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  RunConfig c;
  c.base_dir = base_dir;
  c.paths = {"data/train.jsonl", "data/heldout.jsonl", "images", "targets/targets.olts", "checkpoints", "reports"};
  for (int s = 1; s <= 3; ++s) {
    c.stages[s - 1].stage = s;
    c.stages[s - 1].epochs = 1;
  }
  Section top(j, "config");
  top.get("seed", c.seed);
  top.get("workers", c.workers);
  if (const json* p = top.sub("paths")) {
    Section s(*p, "paths");
    get_path(s, "corpus", c.paths.corpus);
    get_path(s, "heldout", c.paths.heldout);
    get_path(s, "images", c.paths.images);
    get_path(s, "targets", c.paths.targets);
    get_path(s, "checkpoints", c.paths.checkpoints);
    get_path(s, "reports", c.paths.reports);
  }
  if (const json* p = top.sub("data")) {
    Section s(*p, "data");
    std::string kind = taskgen::kind_name(c.data.kind);
    s.get("kind", kind);
    c.data.kind = taskgen::parse_kind(kind);
    s.get("train_count", c.data.train_count);
    s.get("eval_count", c.data.eval_count);
    s.get("min_hops", c.data.min_hops);
    s.get("max_hops", c.data.max_hops);
    s.get("distractors", c.data.distractors);
    s.get("branching", c.data.branching);
    s.get("vocab_size", c.data.vocab_size);
  }
  if (const json* p = top.sub("render")) {
    Section s(*p, "render");
    s.get("width", c.render.width);
    s.get("height", c.render.height);
    s.get("padding", c.render.padding);
    s.get("font_min", c.render.font_min);
    s.get("font_max", c.render.font_max);
    s.get("dpi", c.render.dpi);
    s.get("quality_threshold", c.render.quality_threshold);
    s.get("max_quality_iterations", c.render.max_quality_iterations);
    s.get("padding_floor", c.render.padding_floor);
  }
  if (const json* p = top.sub("frontend")) {
    Section s(*p, "frontend");
    s.get("grid", c.frontend.grid);
    s.get("sub_blocks", c.frontend.sub_blocks);
    s.get("scale", c.frontend.scale);
    s.get("seed", c.frontend.seed);
    s.get("global_context", c.frontend.global_context);
  }
  if (const json* p = top.sub("model")) {
    Section s(*p, "model");
    s.get("d", c.model.d);
    s.get("layers", c.model.layers);
    s.get("heads", c.model.heads);
    s.get("max_seq_len", c.model.max_seq_len);
    s.get("ff_mult", c.model.ff_mult);
    s.get("seed", c.model.seed);
  }
  if (const json* p = top.sub("latent")) {
    Section s(*p, "latent");
    s.get("n_latents", c.n_latents);
    s.get("layer_source", c.layer_source);
    s.get("source_layer", c.source_layer);
    s.get("stop_gradient", c.stop_gradient);
  }
  if (const json* p = top.sub("stages")) {
    Section s(*p, "stages");
    for (int st = 1; st <= 3; ++st) {
      const auto key = std::to_string(st);
      if (const json* q = s.sub(key.c_str())) {
        Section ss(*q, "stages." + key);
        auto& sc = c.stages[st - 1];
        ss.get("epochs", sc.epochs);
        ss.get("learning_rate", sc.learning_rate);
        ss.get("lr_profile", sc.lr_profile);
        ss.get("lambda", sc.lambda);
        ss.get("batch_size", sc.batch_size);
        ss.get("grad_accum", sc.grad_accum);
        ss.get("weight_decay", sc.weight_decay);
        ss.get("eval_every_epoch", sc.eval_every_epoch);
        ss.get("seed", sc.seed);
      }
    }
  }
  if (const json* p = top.sub("eval")) {
    Section s(*p, "eval");
    s.get("cot_budget", c.eval.cot_budget);
    s.get("answer_budget", c.eval.answer_budget);
    s.get("count_latent", c.eval.count_latent);
    s.get("count_eos", c.eval.count_eos);
    s.get("marker", c.eval.marker);
  }

  c.render.validate();
  for (const auto& sc : c.stages) sc.validate();
  if (c.layer_source != "final" && c.layer_source != "block") {
    throw ContractViolation("config: latent.layer_source must be 'final' or 'block'");
  }
  if (c.n_latents == 0) throw ContractViolation("config: latent.n_latents must be >= 1");
  if (c.workers == 0) throw ContractViolation("config: workers must be >= 1");
  if (c.data.train_count == 0 || c.data.eval_count == 0) throw ContractViolation("config: empty corpus");
  return c;
}

RunConfig RunConfig::load(const fs::path& path, const std::optional<fs::path>& out_dir) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  fs::path base = out_dir ? *out_dir : fs::absolute(path).parent_path();
  return from_json(j, base);
}

ojson RunConfig::to_json() const {
  ojson j;
  j["seed"] = seed;
  j["workers"] = workers;
  j["paths"] = {{"corpus", paths.corpus.string()},       {"heldout", paths.heldout.string()},
                {"images", paths.images.string()},       {"targets", paths.targets.string()},
                {"checkpoints", paths.checkpoints.string()}, {"reports", paths.reports.string()}};
  ojson d;
  d["kind"] = taskgen::kind_name(data.kind);
  d["train_count"] = data.train_count;
  d["eval_count"] = data.eval_count;
  d["min_hops"] = data.min_hops;
  d["max_hops"] = data.max_hops;
  d["distractors"] = data.distractors;
  d["branching"] = data.branching;
  d["vocab_size"] = data.vocab_size;
  j["data"] = d;
  j["render"] = ojson::parse(render.canonical_json());
  ojson f;
  f["grid"] = frontend.grid;
  f["sub_blocks"] = frontend.sub_blocks;
  f["scale"] = frontend.scale;
  f["seed"] = frontend.seed;
  f["global_context"] = frontend.global_context;
  j["frontend"] = f;
  ojson m;
  m["d"] = model.d;
  m["layers"] = model.layers;
  m["heads"] = model.heads;
  m["max_seq_len"] = model.max_seq_len;
  m["ff_mult"] = model.ff_mult;
  m["seed"] = model.seed;
  j["model"] = m;
  ojson l;
  l["n_latents"] = n_latents;
  l["layer_source"] = layer_source;
  l["source_layer"] = source_layer;
  l["stop_gradient"] = stop_gradient;
  j["latent"] = l;
  ojson st;
  for (int s = 1; s <= 3; ++s) st[std::to_string(s)] = stage_json(stages[s - 1]);
  j["stages"] = st;
  ojson e;
  e["cot_budget"] = eval.cot_budget;
  e["answer_budget"] = eval.answer_budget;
  e["count_latent"] = eval.count_latent;
  e["count_eos"] = eval.count_eos;
  e["marker"] = eval.marker;
  j["eval"] = e;
  return j;
}

// Paths and worker counts are deliberately left out of every hash: moving a
// run or changing its parallelism does not change what it computes.
Digest RunConfig::data_hash() const {
  ojson s = sections(*this, "data");
  s["seed"] = seed;
  return chain_hash(Digest{}, "data", s);
}

Digest RunConfig::render_hash() const { return chain_hash(data_hash(), "render", sections(*this, "render")); }

Digest RunConfig::stage_hash(int stage) const {
  if (stage < 1 || stage > 3) throw ContractViolation("stage_hash: stage must be 1, 2 or 3");
  const auto st = stage_json(stages[stage - 1]);
  if (stage == 1) {
    ojson s;
    s["model"] = sections(*this, "model");
    s["latent"] = sections(*this, "latent");
    s["stage"] = st;
    return chain_hash(data_hash(), "stage1", s);
  }
  const Digest up = stage == 2 ? targets_hash() : stage_hash(2);
  return chain_hash(up, "stage" + std::to_string(stage), st);
}

Digest RunConfig::targets_hash() const {
  Sha256 h;
  const auto a = stage_hash(1), b = render_hash();
  h.update(std::span<const std::uint8_t>(a));
  h.update(std::span<const std::uint8_t>(b));
  h.update("targets");
  h.update(sections(*this, "frontend").dump());
  return h.finish();
}

Digest RunConfig::eval_hash(eval::EvalMode mode, int stage) const {
  ojson s = sections(*this, "eval");
  s["mode"] = eval::mode_name(mode);
  return chain_hash(stage_hash(stage), "eval", s);
}

void write_lineage(const fs::path& artifact, const Lineage& l) {
  ojson j;
  j["artifact"] = l.artifact;
  j["sha256"] = to_hex(l.sha);
  j["config_hash"] = to_hex(l.config_hash);
  ojson up = ojson::object();
  for (const auto& [k, v] : l.upstream) up[k] = v;
  j["upstream"] = up;
  write_text(lineage_path(artifact), j.dump(2) + "\n");
}

Lineage verify_lineage(const fs::path& artifact, const std::string& name, const Digest& expected_config) {
  const auto side = lineage_path(artifact);
  if (!fs::exists(artifact) || !fs::exists(side)) {
    throw DependencyError(name + " not found at " + artifact.string(), artifact.string());
  }
  Lineage l;
  try {
    const auto j = json::parse(read_text(side));
    l.artifact = j.at("artifact").get<std::string>();
    l.sha = digest_from_hex(j.at("sha256").get<std::string>());
    l.config_hash = digest_from_hex(j.at("config_hash").get<std::string>());
    for (const auto& [k, v] : j.at("upstream").items()) l.upstream[k] = v.get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError("lineage record " + side.string() + ": " + e.what());
  }
  if (sha256_file(artifact) != l.sha) {
    throw LineageError(name + " at " + artifact.string() + " was modified after it was written");
  }
  if (l.config_hash != expected_config) {
    throw LineageError(name + " at " + artifact.string() + " was produced under a different config (" +
                       to_hex(l.config_hash).substr(0, 12) + " vs " + to_hex(expected_config).substr(0, 12) +
                       "); rerun that step");
  }
  return l;
}

fs::path checkpoint_path(const RunConfig& cfg, int stage) {
  return resolve(cfg, cfg.paths.checkpoints) / (checkpoint_name(stage) + ".olmc");
}

fs::path eval_report_path(const RunConfig& cfg, eval::EvalMode mode, int stage) {
  return resolve(cfg, cfg.paths.reports) / ("eval_" + eval::mode_name(mode) + "_stage" + std::to_string(stage) + ".json");
}

void write_config_snapshot(const RunConfig& cfg, const fs::path& dir, const std::string& step) {
  write_text(dir / ("config." + step + ".json"), cfg.to_json().dump(2) + "\n");
}

ojson gen_data(const RunConfig& cfg, const Log& log) {
  taskgen::CorpusSpec spec;
  spec.kind = cfg.data.kind;
  spec.min_hops = cfg.data.min_hops;
  spec.max_hops = cfg.data.max_hops;
  spec.chain.vocab_size = cfg.data.vocab_size;
  spec.chain.distractors = cfg.data.distractors;
  spec.chain.branching = cfg.data.branching;

  spec.count = cfg.data.train_count;
  spec.seed = derive_seed(cfg.seed, 1);
  spec.id_prefix = "train";
  const auto train = taskgen::gen_corpus(spec);
  spec.count = cfg.data.eval_count;
  spec.seed = derive_seed(cfg.seed, 2);
  spec.id_prefix = "heldout";
  const auto held = taskgen::gen_corpus(spec);

  const auto tp = resolve(cfg, cfg.paths.corpus), hp = resolve(cfg, cfg.paths.heldout);
  taskgen::write_manifest(train, tp.string());
  taskgen::write_manifest(held, hp.string());
  const auto h = cfg.data_hash();
  write_lineage(tp, {"corpus", sha256_file(tp), h, {}});
  write_lineage(hp, {"heldout", sha256_file(hp), h, {}});
  write_config_snapshot(cfg, tp.parent_path(), "gen-data");
  log("wrote " + std::to_string(train.size()) + " training and " + std::to_string(held.size()) + " held-out samples");

  ojson out;
  out["corpus"] = tp.string();
  out["heldout"] = hp.string();
  out["train_count"] = train.size();
  out["eval_count"] = held.size();
  return out;
}

ojson render_corpus(const RunConfig& cfg, const Log& log) {
  const auto tp = resolve(cfg, cfg.paths.corpus);
  const auto corpus_lin = verify_lineage(tp, "corpus", cfg.data_hash());
  const auto samples = taskgen::read_manifest(tp.string());
  const auto dir = resolve(cfg, cfg.paths.images);
  fs::create_directories(dir);
  const auto manifest_path = dir / "render_manifest.jsonl";
  const auto rhash = to_hex(cfg.render.hash());

  // Earlier manifest entries let unchanged images be reused: an entry is a
  // hit when its key (render config + CoT text) matches and the file on disk
  // still has the recorded hash.
  std::map<std::string, json> previous;
  if (fs::exists(manifest_path)) {
    std::istringstream in(read_text(manifest_path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = json::parse(line, nullptr, false);
      if (j.is_object() && j.contains("sample_id")) previous[j["sample_id"].get<std::string>()] = j;
    }
  }

  struct Entry {
    ojson row;
    bool cached = false;
    std::string error;
  };
  std::vector<Entry> entries(samples.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < samples.size(); i += step) {
      const auto& s = samples[i];
      const auto text = render::normalize_cot(s.cot);
      const auto key = to_hex(sha256(rhash + "\n" + text));
      const auto file = dir / image_name(s.sample_id);
      auto& e = entries[i];
      const auto it = previous.find(s.sample_id);
      if (it != previous.end() && it->second.value("key", "") == key && fs::exists(file) &&
          to_hex(sha256_file(file)) == it->second.value("sha256", "")) {
        e.row = ojson::parse(it->second.dump());
        e.cached = true;
        continue;
      }
      try {
        const auto img = render::render(text, cfg.render);
        render::write_png(img, file.string());
        ojson r;
        r["sample_id"] = s.sample_id;
        r["file"] = image_name(s.sample_id);
        r["key"] = key;
        r["sha256"] = to_hex(sha256_file(file));
        r["font_size"] = img.layout.font_size;
        r["line_count"] = img.layout.line_count;
        r["chars_per_line"] = img.layout.chars_per_line;
        r["padding"] = img.layout.padding;
        r["quality"] = img.layout.quality;
        r["iterations"] = img.layout.iterations;
        r["degraded"] = img.layout.degraded;
        e.row = std::move(r);
      } catch (const OverflowError& ex) {
        e.error = ex.what();
        ojson r;
        r["sample_id"] = s.sample_id;
        r["overflow"] = true;
        e.row = std::move(r);
      }
    }
  };
  const std::size_t workers = std::min(cfg.workers, std::max<std::size_t>(1, samples.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work, w, workers);
  work(0, workers);
  for (auto& t : pool) t.join();

  std::string manifest;
  std::size_t cached = 0, overflow = 0, degraded = 0;
  for (const auto& e : entries) {
    manifest += e.row.dump() + "\n";
    cached += e.cached;
    if (!e.error.empty()) {
      ++overflow;
      log("overflow: " + e.error);
    }
    if (e.row.contains("degraded") && e.row["degraded"].get<bool>()) ++degraded;
  }
  write_text(manifest_path, manifest);
  write_lineage(manifest_path, {"images", sha256_file(manifest_path), cfg.render_hash(), {{"corpus", to_hex(corpus_lin.sha)}}});
  write_config_snapshot(cfg, dir, "render");
  log("rendered " + std::to_string(samples.size() - cached) + " images, " + std::to_string(cached) + " cache hits");

  ojson out;
  out["images"] = dir.string();
  out["manifest"] = manifest_path.string();
  out["count"] = samples.size();
  out["cache_hits"] = cached;
  out["overflow"] = overflow;
  out["degraded"] = degraded;
  return out;
}

namespace {

struct Loaded {
  model::Checkpoint ckpt;
  Lineage lineage;
};

Loaded load_stage(const RunConfig& cfg, int stage) {
  const auto path = checkpoint_path(cfg, stage);
  if (!fs::exists(path)) {
    throw DependencyError("stage " + std::to_string(stage) + " checkpoint not found at " + path.string() +
                              "; run 'train --stage " + std::to_string(stage) + "' first",
                          path.string());
  }
  auto lin = verify_lineage(path, checkpoint_name(stage) + " checkpoint", cfg.stage_hash(stage));
  auto ckpt = model::load_checkpoint(path.string());
  curriculum::check_lineage(ckpt, stage);
  return {std::move(ckpt), std::move(lin)};
}

curriculum::Validator make_validator(const RunConfig& cfg, int stage, const std::vector<taskgen::Sample>& held) {
  const auto mode = stage == 1 ? eval::EvalMode::cot : eval::EvalMode::onelatent;
  auto ec = eval_config(cfg, mode);
  return [ec, &held](const model::ModelState& st) {
    const auto r = eval::run_eval(st, held, ec, "validation");
    return curriculum::ValidationResult{r.accuracy, r.avg_out, r.otc};
  };
}

}  // namespace

ojson extract_targets(const RunConfig& cfg, const Log& log) {
  const auto tp = resolve(cfg, cfg.paths.corpus);
  const auto corpus_lin = verify_lineage(tp, "corpus", cfg.data_hash());
  const auto dir = resolve(cfg, cfg.paths.images);
  const auto manifest_path = dir / "render_manifest.jsonl";
  require(manifest_path, "render manifest", "render");
  const auto images_lin = verify_lineage(manifest_path, "render manifest", cfg.render_hash());
  const auto frozen = load_stage(cfg, 1);
  const auto samples = taskgen::read_manifest(tp.string());
  const auto fe = front_end(cfg);

  std::set<std::string> overflowed;
  {
    std::istringstream in(read_text(manifest_path));
    std::string line;
    while (std::getline(in, line)) {
      const auto j = json::parse(line);
      if (j.value("overflow", false)) overflowed.insert(j["sample_id"].get<std::string>());
    }
  }

  targets::TargetStore store;
  store.d = cfg.model.d;
  store.frozen_hash = frozen.lineage.sha;
  store.frontend_seed = cfg.frontend.seed;
  std::vector<std::vector<double>> vecs(samples.size());
  std::vector<std::string> errors(samples.size());
  const auto& model = frozen.ckpt.state.model;
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < samples.size(); i += step) {
      if (overflowed.contains(samples[i].sample_id)) continue;
      const auto file = dir / image_name(samples[i].sample_id);
      try {
        const auto img = render::read_png(file.string());
        vecs[i] = targets::extract_target(img, fe, model, model::Tokenizer::kBos);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t workers = std::min(cfg.workers, std::max<std::size_t>(1, samples.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work, w, workers);
  work(0, workers);
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!errors[i].empty()) throw DependencyError("target extraction failed for " + samples[i].sample_id + ": " + errors[i], (dir / image_name(samples[i].sample_id)).string());
    if (!vecs[i].empty()) store.add(samples[i].sample_id, std::move(vecs[i]));
  }
  const auto path = resolve(cfg, cfg.paths.targets);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  targets::store_targets(store, path.string());
  write_lineage(path, {"targets", sha256_file(path), cfg.targets_hash(),
                       {{"corpus", to_hex(corpus_lin.sha)}, {"images", to_hex(images_lin.sha)},
                        {"stage1", to_hex(frozen.lineage.sha)}}});
  write_config_snapshot(cfg, path.parent_path(), "extract-targets");
  log("extracted " + std::to_string(store.size()) + " targets");

  ojson out;
  out["targets"] = path.string();
  out["count"] = store.size();
  out["skipped_overflow"] = overflowed.size();
  out["frozen_model"] = to_hex(frozen.lineage.sha);
  return out;
}

ojson train(const RunConfig& cfg, int stage, const Log& log) {
  if (stage < 1 || stage > 3) throw ContractViolation("train: stage must be 1, 2 or 3");
  const auto tp = resolve(cfg, cfg.paths.corpus), hp = resolve(cfg, cfg.paths.heldout);
  const auto corpus_lin = verify_lineage(tp, "corpus", cfg.data_hash());
  verify_lineage(hp, "held-out corpus", cfg.data_hash());
  const auto samples = taskgen::read_manifest(tp.string());
  auto held = taskgen::read_manifest(hp.string());

  std::optional<model::ModelState> state;
  Digest parent{};
  std::map<std::string, std::string> upstream{{"corpus", to_hex(corpus_lin.sha)}};
  std::optional<targets::TargetStore> store;
  if (stage == 1) {
    std::vector<std::string> texts;
    for (const auto& s : samples) {
      texts.push_back(s.question);
      texts.push_back(s.cot);
      texts.push_back(s.answer);
    }
    auto tok = model::Tokenizer::build(texts);
    model::ModelConfig mc;
    mc.vocab_size = static_cast<std::uint32_t>(tok.size());
    mc.d = cfg.model.d;
    mc.layers = cfg.model.layers;
    mc.heads = cfg.model.heads;
    mc.max_seq_len = cfg.model.max_seq_len;
    mc.ff_mult = cfg.model.ff_mult;
    mc.rng_seed = cfg.model.seed;
    state.emplace(model::ModelState{std::move(tok), model::MicroTransformer(mc)});
    // The latent tokens exist from the start so that the frozen stage-1
    // snapshot and every later stage share one vocabulary.
    curriculum::init_special_tokens(*state);
  } else {
    if (stage == 2 && !fs::exists(resolve(cfg, cfg.paths.targets))) {
      const auto path = resolve(cfg, cfg.paths.targets);
      throw DependencyError("stage 2 needs the target store at " + path.string() + "; run 'extract-targets' first",
                            path.string());
    }
    auto prev = load_stage(cfg, stage - 1);
    parent = prev.lineage.sha;
    upstream[checkpoint_name(stage - 1)] = to_hex(prev.lineage.sha);
    state.emplace(std::move(prev.ckpt.state));
    if (stage == 2) {
      const auto path = resolve(cfg, cfg.paths.targets);
      const auto lin = verify_lineage(path, "target store", cfg.targets_hash());
      // Targets must come from exactly the stage-1 checkpoint being trained on.
      targets::TargetExpectation expect{cfg.model.d, parent, cfg.frontend.seed};
      store = targets::load_targets(path.string(), expect);
      upstream["targets"] = to_hex(lin.sha);
    }
  }

  const auto lcfg = latent_config(cfg, state->tokenizer);
  auto examples = curriculum::encode_examples(samples, state->tokenizer);
  if (store) {
    // Samples whose CoT overflowed the canvas have no target and sit out stage 2.
    std::erase_if(examples, [&](const curriculum::Example& e) { return !store->contains(e.sample_id); });
  }
  const auto ckdir = resolve(cfg, cfg.paths.checkpoints);
  const auto epochs_dir = ckdir / checkpoint_name(stage);
  fs::create_directories(epochs_dir);
  const auto metrics_path = resolve(cfg, cfg.paths.reports) / ("metrics_stage" + std::to_string(stage) + ".jsonl");
  fs::remove(metrics_path);

  curriculum::RunOptions opts;
  opts.checkpoint_dir = epochs_dir.string();
  opts.metrics_path = metrics_path.string();
  opts.parent = parent;
  opts.config_hash = cfg.stage_hash(stage);
  opts.validator = make_validator(cfg, stage, held);
  opts.progress = log;
  auto sc = cfg.stage(stage);
  sc.stage = stage;
  const auto result = curriculum::run_stage(examples, *state, sc, lcfg, store ? &*store : nullptr, opts);

  const auto path = checkpoint_path(cfg, stage);
  const auto sha = model::save_checkpoint(*result.final_checkpoint, path.string());
  write_lineage(path, {checkpoint_name(stage), sha, cfg.stage_hash(stage), upstream});
  write_config_snapshot(cfg, ckdir, "train-stage" + std::to_string(stage));

  ojson out;
  out["stage"] = stage;
  out["checkpoint"] = path.string();
  out["sha256"] = to_hex(sha);
  out["examples"] = examples.size();
  out["epochs"] = result.epochs.size();
  if (!result.epochs.empty()) {
    const auto& last = result.epochs.back();
    out["final_ntp"] = last.ntp;
    if (last.mse) out["final_mse"] = *last.mse;
    if (last.val_acc) out["val_acc"] = *last.val_acc;
    if (last.val_avg_out) out["val_avg_out"] = *last.val_avg_out;
  }
  return out;
}

ojson evaluate(const RunConfig& cfg, eval::EvalMode mode, std::optional<int> stage_opt, const Log& log) {
  const int stage = stage_opt.value_or(mode == eval::EvalMode::cot ? 1 : 3);
  if (stage < 1 || stage > 3) throw ContractViolation("eval: stage must be 1, 2 or 3");
  const auto hp = resolve(cfg, cfg.paths.heldout);
  const auto held_lin = verify_lineage(hp, "held-out corpus", cfg.data_hash());
  const auto held = taskgen::read_manifest(hp.string());
  const auto ck = load_stage(cfg, stage);

  auto report = eval::run_eval(ck.ckpt.state, held, eval_config(cfg, mode), taskgen::kind_name(cfg.data.kind));
  std::string why;
  if (!eval::validate_report(report, &why)) throw NumericFault("eval", "report invariant broken: " + why);

  const auto path = eval_report_path(cfg, mode, stage);
  write_text(path, eval::report_json(report) + "\n");
  auto stem = path;
  stem.replace_extension();
  write_text(stem.string() + ".txt", eval::report_table({report}));
  write_text(stem.string() + ".csv", eval::records_csv(report));
  write_lineage(path, {"eval", sha256_file(path), cfg.eval_hash(mode, stage),
                       {{"heldout", to_hex(held_lin.sha)}, {checkpoint_name(stage), to_hex(ck.lineage.sha)}}});
  write_config_snapshot(cfg, path.parent_path(), "eval-" + eval::mode_name(mode) + "-stage" + std::to_string(stage));
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s stage %d: acc %.2f avg_out %.2f otc %.2f overflow %zu", eval::mode_name(mode).c_str(),
                stage, report.accuracy, report.avg_out, report.otc, report.overflow_count);
  log(buf);

  ojson out;
  out["report"] = path.string();
  out["mode"] = eval::mode_name(mode);
  out["stage"] = stage;
  out["accuracy"] = report.accuracy;
  out["avg_out"] = report.avg_out;
  out["otc"] = report.otc;
  out["overflow"] = report.overflow_count;
  return out;
}

ojson report(const RunConfig& cfg, const Log& log) {
  struct Row {
    std::string label;
    eval::EvalMode mode;
    int stage;
  };
  const Row rows[] = {{"Stage 1 (CoT)", eval::EvalMode::cot, 1},
                      {"Stage 2 (Alignment)", eval::EvalMode::onelatent, 2},
                      {"Stage 3 (Final)", eval::EvalMode::onelatent, 3}};

  // Every report must descend from the current checkpoints, which in turn
  // must form one chain stage 1 -> 2 -> 3.
  std::map<int, std::string> ck_sha;
  for (int s = 1; s <= 3; ++s) {
    const auto p = checkpoint_path(cfg, s);
    if (!fs::exists(p)) continue;
    const auto l = verify_lineage(p, checkpoint_name(s) + " checkpoint", cfg.stage_hash(s));
    ck_sha[s] = to_hex(l.sha);
    if (s > 1) {
      const auto up = l.upstream.find(checkpoint_name(s - 1));
      if (!ck_sha.contains(s - 1) || up == l.upstream.end() || up->second != ck_sha[s - 1]) {
        throw LineageError("stage " + std::to_string(s) + " checkpoint was not trained from the current stage " +
                           std::to_string(s - 1) + " checkpoint; retrain it");
      }
    }
  }

  std::vector<eval::EvalReport> reports;
  std::vector<std::string> labels;
  ojson table = ojson::array();
  std::optional<eval::EvalReport> cot, final_latent;
  for (const auto& r : rows) {
    const auto path = eval_report_path(cfg, r.mode, r.stage);
    if (!fs::exists(path)) continue;
    const auto l = verify_lineage(path, "eval report", cfg.eval_hash(r.mode, r.stage));
    const auto ck = l.upstream.find(checkpoint_name(r.stage));
    if (!ck_sha.contains(r.stage) || ck == l.upstream.end() || ck->second != ck_sha[r.stage]) {
      throw LineageError("eval report " + path.string() + " was produced by a different stage " +
                         std::to_string(r.stage) + " checkpoint; rerun eval");
    }
    auto rep = eval::report_from_json(read_text(path));
    ojson row;
    row["stage"] = r.label;
    row["accuracy"] = eval::round_to(rep.accuracy, 2);
    row["avg_out"] = eval::round_to(rep.avg_out, 2);
    row["otc"] = eval::round_to(rep.otc, 2);
    table.push_back(row);
    if (r.stage == 1) cot = rep;
    if (r.stage == 3) final_latent = rep;
    labels.push_back(r.label);
    reports.push_back(std::move(rep));
  }
  if (reports.empty()) {
    throw DependencyError("no eval reports found under " + resolve(cfg, cfg.paths.reports).string() + "; run 'eval' first",
                          resolve(cfg, cfg.paths.reports).string());
  }

  ojson out;
  out["benchmark"] = taskgen::kind_name(cfg.data.kind);
  out["rows"] = table;
  std::string text = "Stage                 Acc      #O      OTC\n";
  for (const auto& row : table) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-20s %6.2f %7.2f %8.2f\n", row["stage"].get<std::string>().c_str(),
                  row["accuracy"].get<double>(), row["avg_out"].get<double>(), row["otc"].get<double>());
    text += buf;
  }
  if (cot && final_latent) {
    const auto c = eval::compression_report(*cot, *final_latent);
    out["compression"] = {{"co", eval::round_to(c.co, 2)}, {"no", eval::round_to(c.no, 2)}, {"cr", c.cr}};
    char buf[128];
    std::snprintf(buf, sizeof buf, "\n#CO %.2f  #NO %.2f  #CR %.1fx\n", c.co, c.no, c.cr);
    text += buf;
  }
  const auto dir = resolve(cfg, cfg.paths.reports);
  write_text(dir / "summary.json", out.dump(2) + "\n");
  write_text(dir / "summary.txt", text);
  log(text);
  return out;
}

}  // namespace onelatent::pipeline
