#include "onelatent/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "onelatent/numeric/ops.hpp"
#include "onelatent/util/error.hpp"
#include "onelatent/util/rng.hpp"

namespace onelatent::model {

namespace nm = onelatent::numeric;

void ModelConfig::validate() const {
  if (vocab_size == 0 || d == 0 || layers == 0 || heads == 0 || max_seq_len == 0 || ff_mult == 0) {
    throw ContractViolation("ModelConfig: all sizes must be positive");
  }
  if (d % heads != 0) throw ContractViolation("ModelConfig: d must be divisible by heads");
}

namespace {

Tensor normal_param(Rng& rng, nm::Shape shape, double stddev) {
  std::vector<double> v(nm::shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor const_param(nm::Shape shape, double value) { return Tensor::full(std::move(shape), value, true); }

Tensor copy_param(const Tensor& t) {
  return Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
}

}  // namespace

MicroTransformer::MicroTransformer(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.rng_seed);
  const std::size_t d = cfg_.d, v = cfg_.vocab_size, ff = cfg_.d * cfg_.ff_mult;
  // Embeddings and the head start small; block matrices use fan-in scaling
  // so attention logits are not vanishingly small at narrow widths, and the
  // residual-writing projections are shrunk by sqrt(2 * layers).
  const double base = 0.02;
  const double depth = std::sqrt(2.0 * cfg_.layers);
  const double in_d = 1.0 / std::sqrt(static_cast<double>(d)), in_ff = 1.0 / std::sqrt(static_cast<double>(ff));
  tok_emb_ = normal_param(rng, {v, d}, base);
  pos_emb_ = normal_param(rng, {cfg_.max_seq_len, d}, 0.01);
  for (std::uint32_t l = 0; l < cfg_.layers; ++l) {
    Block b;
    b.ln1_g = const_param({d}, 1.0);
    b.ln1_b = const_param({d}, 0.0);
    b.wq = normal_param(rng, {d, d}, in_d);
    b.wk = normal_param(rng, {d, d}, in_d);
    b.wv = normal_param(rng, {d, d}, in_d);
    b.wo = normal_param(rng, {d, d}, in_d / depth);
    b.bo = const_param({d}, 0.0);
    b.ln2_g = const_param({d}, 1.0);
    b.ln2_b = const_param({d}, 0.0);
    b.w1 = normal_param(rng, {d, ff}, in_d);
    b.b1 = const_param({ff}, 0.0);
    b.w2 = normal_param(rng, {ff, d}, in_ff / depth);
    b.b2 = const_param({d}, 0.0);
    blocks_.push_back(std::move(b));
  }
  lnf_g_ = const_param({d}, 1.0);
  lnf_b_ = const_param({d}, 0.0);
  if (!cfg_.tie_embeddings) head_w_ = normal_param(rng, {d, v}, base);
  head_b_ = const_param({v}, 0.0);
}

std::vector<nm::Parameter> MicroTransformer::parameters() const {
  std::vector<nm::Parameter> out;
  out.push_back({"tok_emb", tok_emb_, false});
  out.push_back({"pos_emb", pos_emb_, false});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = "block" + std::to_string(l) + ".";
    out.push_back({p + "ln1_g", b.ln1_g, false});
    out.push_back({p + "ln1_b", b.ln1_b, false});
    out.push_back({p + "wq", b.wq, true});
    out.push_back({p + "wk", b.wk, true});
    out.push_back({p + "wv", b.wv, true});
    out.push_back({p + "wo", b.wo, true});
    out.push_back({p + "bo", b.bo, false});
    out.push_back({p + "ln2_g", b.ln2_g, false});
    out.push_back({p + "ln2_b", b.ln2_b, false});
    out.push_back({p + "w1", b.w1, true});
    out.push_back({p + "b1", b.b1, false});
    out.push_back({p + "w2", b.w2, true});
    out.push_back({p + "b2", b.b2, false});
  }
  out.push_back({"lnf_g", lnf_g_, false});
  out.push_back({"lnf_b", lnf_b_, false});
  if (!cfg_.tie_embeddings) out.push_back({"head_w", head_w_, true});
  out.push_back({"head_b", head_b_, false});
  return out;
}

void MicroTransformer::append_tokens(const std::vector<std::vector<double>>& embedding_rows,
                                     const std::vector<std::vector<double>>& output_columns,
                                     const std::vector<double>& output_bias) {
  const std::size_t d = cfg_.d, v = cfg_.vocab_size, n = embedding_rows.size();
  if (output_bias.size() != n || (!cfg_.tie_embeddings && output_columns.size() != n)) {
    throw ContractViolation("append_tokens: one embedding row, output column and bias per new token");
  }
  std::vector<double> emb(tok_emb_.data().begin(), tok_emb_.data().end());
  for (const auto& r : embedding_rows) {
    if (r.size() != d) throw ContractViolation("append_tokens: embedding row width differs from d");
    emb.insert(emb.end(), r.begin(), r.end());
  }
  tok_emb_ = Tensor::from({v + n, d}, std::move(emb), true);
  if (!cfg_.tie_embeddings) {
    std::vector<double> w((v + n) * d);
    const auto old = head_w_.data();
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < v; ++j) w[i * (v + n) + j] = old[i * v + j];
      for (std::size_t k = 0; k < n; ++k) {
        if (output_columns[k].size() != d) throw ContractViolation("append_tokens: output column height differs from d");
        w[i * (v + n) + v + k] = output_columns[k][i];
      }
    }
    head_w_ = Tensor::from({d, v + n}, std::move(w), true);
  }
  std::vector<double> bias(head_b_.data().begin(), head_b_.data().end());
  bias.insert(bias.end(), output_bias.begin(), output_bias.end());
  head_b_ = Tensor::from({v + n}, std::move(bias), true);
  cfg_.vocab_size = static_cast<std::uint32_t>(v + n);
}

void MicroTransformer::load_parameters(const std::vector<std::vector<double>>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw FormatError("load_parameters: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].value.mutable_data();
    if (values[i].size() != dst.size()) throw FormatError("load_parameters: size mismatch for " + params[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

MicroTransformer MicroTransformer::clone() const {
  MicroTransformer m = *this;
  m.tok_emb_ = copy_param(tok_emb_);
  m.pos_emb_ = copy_param(pos_emb_);
  for (auto& b : m.blocks_) {
    for (Tensor* t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.bo, &b.ln2_g, &b.ln2_b, &b.w1, &b.b1, &b.w2,
                      &b.b2}) {
      *t = copy_param(*t);
    }
  }
  m.lnf_g_ = copy_param(lnf_g_);
  m.lnf_b_ = copy_param(lnf_b_);
  if (head_w_.defined()) m.head_w_ = copy_param(head_w_);
  m.head_b_ = copy_param(head_b_);
  return m;
}

ForwardTrace MicroTransformer::forward(std::span<const int> ids, const Overrides& overrides, bool keep_layers) const {
  ForwardSession s(*this, keep_layers);
  s.extend(ids, overrides);
  return s.trace();
}

ForwardSession::ForwardSession(const MicroTransformer& model, bool keep_layers)
    : model_(&model), keep_layers_(keep_layers), keys_(model.blocks_.size()), values_(model.blocks_.size()) {}

ChunkOutput ForwardSession::extend(std::span<const int> ids, const Overrides& overrides) {
  const auto& m = *model_;
  const auto& cfg = m.cfg_;
  const std::size_t n = ids.size();
  if (n == 0) throw ContractViolation("ForwardSession::extend: empty chunk");
  if (length_ + n > cfg.max_seq_len) {
    throw OverflowError("sequence of length " + std::to_string(length_ + n) + " exceeds max_seq_len " +
                        std::to_string(cfg.max_seq_len));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::uint32_t>(id) >= cfg.vocab_size) {
      throw ContractViolation("forward: token id " + std::to_string(id) + " out of range");
    }
  }
  Tensor x = nm::gather_rows(m.tok_emb_, ids);
  for (const auto& [pos, vec] : overrides) {
    if (pos < length_ || pos >= length_ + n) {
      throw ContractViolation("forward: override position " + std::to_string(pos) + " outside the chunk");
    }
    if (vec.numel() != cfg.d) throw ContractViolation("forward: override vector width differs from d");
    x = nm::replace_row(x, pos - length_, vec);
  }
  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(length_ + i);
  x = nm::add(x, nm::gather_rows(m.pos_emb_, positions));

  std::vector<Tensor> layer_out;
  for (std::size_t l = 0; l < m.blocks_.size(); ++l) {
    const auto& b = m.blocks_[l];
    const Tensor h = nm::layer_norm(x, b.ln1_g, b.ln1_b);
    const Tensor q = nm::matmul(h, b.wq);
    Tensor k = nm::matmul(h, b.wk);
    Tensor v = nm::matmul(h, b.wv);
    if (keys_[l].defined()) {
      k = nm::concat_rows({keys_[l], k});
      v = nm::concat_rows({values_[l], v});
    }
    keys_[l] = k;
    values_[l] = v;
    const Tensor a = nm::causal_attention(q, k, v, cfg.heads, length_);
    x = nm::add(x, nm::add_row(nm::matmul(a, b.wo), b.bo));
    const Tensor h2 = nm::layer_norm(x, b.ln2_g, b.ln2_b);
    const Tensor f = nm::add_row(nm::matmul(nm::gelu(nm::add_row(nm::matmul(h2, b.w1), b.b1)), b.w2), b.b2);
    x = nm::add(x, f);
    if (keep_layers_) layer_out.push_back(x);
  }
  ChunkOutput out;
  out.final_hidden = nm::layer_norm(x, m.lnf_g_, m.lnf_b_);
  const Tensor w = cfg.tie_embeddings ? nm::transpose(m.tok_emb_) : m.head_w_;
  out.logits = nm::add_row(nm::matmul(out.final_hidden, w), m.head_b_);
  out.layer_hiddens = std::move(layer_out);
  length_ += n;
  logits_.push_back(out.logits);
  hidden_.push_back(out.final_hidden);
  if (keep_layers_) layers_.push_back(out.layer_hiddens);
  return out;
}

ForwardTrace ForwardSession::trace() const {
  if (logits_.empty()) throw ContractViolation("ForwardSession::trace: nothing has been forwarded");
  ForwardTrace t;
  if (logits_.size() == 1) {
    t.logits = logits_[0];
    t.final_hidden = hidden_[0];
    if (keep_layers_) t.layer_hiddens = layers_[0];
    return t;
  }
  t.logits = nm::concat_rows(logits_);
  t.final_hidden = nm::concat_rows(hidden_);
  if (keep_layers_) {
    for (std::size_t l = 0; l < model_->blocks_.size(); ++l) {
      std::vector<Tensor> parts;
      for (const auto& c : layers_) parts.push_back(c[l]);
      t.layer_hiddens.push_back(nm::concat_rows(parts));
    }
  }
  return t;
}

Generation generate(const MicroTransformer& model, std::span<const int> prompt, std::size_t max_new_tokens,
                    const LatentPlan& plan, int eos_id, std::span<const int> banned) {
  if (prompt.empty()) throw ContractViolation("generate: empty prompt");
  const std::size_t forced = plan.slots + (plan.end_latent_id >= 0 ? 1 : 0);
  if (prompt.size() + forced + max_new_tokens > model.config().max_seq_len) {
    throw OverflowError("generate: prompt of " + std::to_string(prompt.size()) + " tokens plus " +
                        std::to_string(forced + max_new_tokens) + " generated positions exceeds max_seq_len " +
                        std::to_string(model.config().max_seq_len));
  }
  numeric::NoGradGuard frozen;
  Generation g;
  if (max_new_tokens == 0) return g;
  ForwardSession s(model);
  ChunkOutput last = s.extend(prompt);
  for (std::size_t i = 0; i < plan.slots; ++i) {
    const std::size_t pos = s.length();
    const int id = plan.latent_id;
    Overrides ov;
    if (plan.fill_from_hidden) {
      ov.emplace(pos, nm::slice_rows(last.final_hidden, last.final_hidden.rows() - 1, last.final_hidden.rows()));
    }
    last = s.extend(std::span<const int>(&id, 1), ov);
  }
  if (plan.end_latent_id >= 0) {
    const int id = plan.end_latent_id;
    last = s.extend(std::span<const int>(&id, 1));
  }
  const std::size_t vocab = model.vocab_size();
  std::vector<bool> blocked(vocab, false);
  for (int b : banned) {
    if (b >= 0 && static_cast<std::size_t>(b) < vocab) blocked[static_cast<std::size_t>(b)] = true;
  }
  for (std::size_t step = 0; step < max_new_tokens; ++step) {
    const std::size_t r = last.logits.rows() - 1;
    const double* row = last.logits.data().data() + r * vocab;
    int best = -1;
    for (std::size_t j = 0; j < vocab; ++j) {
      if (blocked[j]) continue;
      if (best < 0 || row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    }
    const auto h = last.final_hidden.data();
    const std::size_t d = model.hidden_dim();
    g.step_hidden.emplace_back(h.begin() + static_cast<std::ptrdiff_t>(r * d),
                               h.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    g.tokens.push_back(best);
    if (best == eos_id) {
      g.hit_eos = true;
      break;
    }
    if (step + 1 < max_new_tokens) last = s.extend(std::span<const int>(&best, 1));
  }
  return g;
}

}  // namespace onelatent::model
