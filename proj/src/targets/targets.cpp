#include "onelatent/targets/targets.hpp"

#include <cmath>

#include "onelatent/numeric/tensor.hpp"
#include "onelatent/util/binio.hpp"
#include "onelatent/util/error.hpp"
#include "onelatent/util/rng.hpp"

namespace onelatent::targets {

ReferenceFrontEnd::ReferenceFrontEnd(const ReferenceFrontEndConfig& cfg) : cfg_(cfg) {
  if (cfg.grid == 0 || cfg.sub_blocks == 0 || cfg.d == 0) {
    throw ContractViolation("ReferenceFrontEnd: grid, sub_blocks and d must be positive");
  }
  Rng rng(cfg.seed);
  proj_.resize(local_dim() * cfg.d);
  const double sd = 1.0 / std::sqrt(static_cast<double>(local_dim()));
  for (double& w : proj_) w = rng.normal(0.0, sd);
  global_proj_.resize(global_dim() * cfg.d);
  const double gsd = global_dim() ? 1.0 / std::sqrt(static_cast<double>(global_dim())) : 0.0;
  for (double& w : global_proj_) w = rng.normal(0.0, gsd);
}

std::vector<double> ReferenceFrontEnd::patch_features(const render::RenderedImage& img, std::size_t patch) const {
  const std::size_t g = cfg_.grid, s = cfg_.sub_blocks;
  // Images are padded with background up to a multiple of G * s.
  const std::size_t side = std::max(img.width, img.height);
  const std::size_t unit = g * s;
  const std::size_t padded = (side + unit - 1) / unit * unit;
  const std::size_t ps = padded / g, bs = ps / s;
  const std::size_t py = patch / g, px = patch % g;
  auto pix = [&](std::size_t x, std::size_t y) -> double {
    if (x >= static_cast<std::size_t>(img.width) || y >= static_cast<std::size_t>(img.height)) return 255.0;
    return img.pixels[y * static_cast<std::size_t>(img.width) + x];
  };
  std::vector<double> f;
  f.reserve(local_dim());
  for (std::size_t by = 0; by < s; ++by) {
    for (std::size_t bx = 0; bx < s; ++bx) {
      const std::size_t x0 = px * ps + bx * bs, y0 = py * ps + by * bs;
      double dark = 0, eh = 0, ev = 0, ink = 0;
      for (std::size_t y = y0; y < y0 + bs; ++y) {
        for (std::size_t x = x0; x < x0 + bs; ++x) {
          const double p = pix(x, y);
          dark += 1.0 - p / 255.0;
          if (p < 128.0) ink += 1.0;
          if (x + 1 < x0 + bs) eh += std::abs(pix(x + 1, y) - p) / 255.0;
          if (y + 1 < y0 + bs) ev += std::abs(pix(x, y + 1) - p) / 255.0;
        }
      }
      const double n = static_cast<double>(bs * bs);
      f.push_back(dark / n);
      f.push_back(eh / n);
      f.push_back(ev / n);
      f.push_back(ink / n);
    }
  }
  return f;
}

namespace {

// Darkness of every sub-block, laid out as one (G*s) x (G*s) map, mean removed.
std::vector<double> centered_darkness(const std::vector<std::vector<double>>& locals, std::size_t g, std::size_t s) {
  const std::size_t side = g * s;
  std::vector<double> map(side * side);
  double mean = 0;
  for (std::size_t p = 0; p < locals.size(); ++p) {
    const std::size_t py = p / g, px = p % g;
    for (std::size_t b = 0; b < s * s; ++b) {
      const double v = locals[p][4 * b];
      map[(py * s + b / s) * side + px * s + b % s] = v;
      mean += v;
    }
  }
  mean /= static_cast<double>(map.size());
  for (double& x : map) x -= mean;
  return map;
}

void project_add(std::span<const double> f, const std::vector<double>& w, std::span<double> out) {
  const std::size_t d = out.size();
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] == 0.0) continue;
    const double* row = w.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) out[j] += f[i] * row[j];
  }
}

}  // namespace

std::vector<double> ReferenceFrontEnd::global_features(const render::RenderedImage& img) const {
  std::vector<std::vector<double>> locals;
  for (std::size_t p = 0; p < sequence_length(); ++p) locals.push_back(patch_features(img, p));
  return centered_darkness(locals, cfg_.grid, cfg_.sub_blocks);
}

std::vector<Embedding> ReferenceFrontEnd::encode(const render::RenderedImage& img) const {
  if (img.width <= 0 || img.height <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height)) {
    throw ContractViolation("encode_image: pixel buffer does not match image dimensions");
  }
  const std::size_t d = cfg_.d;
  std::vector<std::vector<double>> locals;
  locals.reserve(sequence_length());
  for (std::size_t p = 0; p < sequence_length(); ++p) locals.push_back(patch_features(img, p));
  // The global term is shared by every patch, so it is projected once.
  std::vector<double> context(d, 0.0);
  if (cfg_.global_context) project_add(centered_darkness(locals, cfg_.grid, cfg_.sub_blocks), global_proj_, context);
  std::vector<Embedding> out;
  out.reserve(sequence_length());
  for (const auto& f : locals) {
    Embedding e = context;
    project_add(f, proj_, e);
    for (double& x : e) x *= cfg_.scale;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Embedding> encode_image(const render::RenderedImage& img, const VisionFrontEnd& fe) {
  auto seq = fe.encode(img);
  for (const auto& e : seq) {
    if (e.size() != fe.dim()) throw ContractViolation("encode_image: front-end produced a wrong-sized embedding");
  }
  return seq;
}

std::vector<double> extract_target(const render::RenderedImage& img, const VisionFrontEnd& fe,
                                   const model::MicroTransformer& frozen, int bos_id,
                                   std::optional<std::size_t> position) {
  if (fe.dim() != frozen.hidden_dim()) {
    throw ContractViolation("extract_target: front-end dim " + std::to_string(fe.dim()) + " != model d " +
                            std::to_string(frozen.hidden_dim()));
  }
  const auto visual = encode_image(img, fe);
  const std::size_t len = visual.size() + 1;
  if (len > frozen.config().max_seq_len) {
    throw OverflowError("extract_target: [BOS; visual] has " + std::to_string(len) + " positions, max_seq_len is " +
                        std::to_string(frozen.config().max_seq_len));
  }
  numeric::NoGradGuard frozen_mode;
  // Visual positions carry the BOS id as a placeholder; their embeddings are
  // replaced wholesale by the override.
  std::vector<int> ids(len, bos_id);
  model::Overrides overrides;
  for (std::size_t i = 0; i < visual.size(); ++i) {
    overrides.emplace(i + 1, numeric::Tensor::from({visual[i].size()}, visual[i]));
  }
  const auto trace = frozen.forward(ids, overrides);
  const std::size_t pos = position.value_or(len - 1);
  if (pos >= len) throw ContractViolation("extract_target: position outside the visual sequence");
  const std::size_t d = frozen.hidden_dim();
  const auto h = trace.final_hidden.data();
  return std::vector<double>(h.begin() + static_cast<std::ptrdiff_t>(pos * d),
                             h.begin() + static_cast<std::ptrdiff_t>((pos + 1) * d));
}

void TargetStore::add(const std::string& id, std::vector<double> v) {
  if (v.size() != d) throw ContractViolation("TargetStore: vector for " + id + " has wrong dimension");
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericFault("store_targets", "non-finite target component for " + id);
  }
  vectors[id] = std::move(v);
}

const std::vector<double>& TargetStore::at(const std::string& id) const {
  const auto it = vectors.find(id);
  if (it == vectors.end()) throw ContractViolation("TargetStore: no target for sample " + id);
  return it->second;
}

std::vector<std::uint8_t> serialize_targets(const TargetStore& store) {
  ByteWriter w;
  w.magic("OLTS");
  w.u16(TargetStore::kVersion);
  w.u32(store.d);
  w.u64(store.vectors.size());
  w.bytes(store.frozen_hash);
  w.u64(store.frontend_seed);
  for (const auto& [id, v] : store.vectors) {
    if (v.size() != store.d) throw ContractViolation("serialize_targets: wrong dimension for " + id);
    w.str(id);
    w.f64s(v);
  }
  return w.take();
}

TargetStore deserialize_targets(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("OLTS");
  const auto version = r.u16();
  if (version != TargetStore::kVersion) throw FormatError("target store: unsupported version " + std::to_string(version));
  TargetStore s;
  s.d = r.u32();
  const auto count = r.u64();
  r.bytes(s.frozen_hash);
  s.frontend_seed = r.u64();
  std::string prev;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string id = r.str();
    if (i > 0 && id <= prev) throw FormatError("target store: records not sorted by sample id");
    std::vector<double> v(s.d);
    r.f64s(v);
    prev = id;
    s.vectors.emplace(std::move(id), std::move(v));
  }
  if (r.remaining() != 0) throw FormatError("target store: trailing bytes");
  return s;
}

void store_targets(const TargetStore& store, const std::string& path) { write_file_bytes(path, serialize_targets(store)); }

void validate_targets(const TargetStore& store, const TargetExpectation& expect) {
  if (expect.d && *expect.d != store.d) {
    throw StaleTargetError("target store has d=" + std::to_string(store.d) + " but the model expects d=" +
                           std::to_string(*expect.d));
  }
  if (expect.frozen_hash && *expect.frozen_hash != store.frozen_hash) {
    throw StaleTargetError("target store was extracted with frozen model " + to_hex(store.frozen_hash) +
                           ", expected " + to_hex(*expect.frozen_hash));
  }
  if (expect.frontend_seed && *expect.frontend_seed != store.frontend_seed) {
    throw StaleTargetError("target store front-end seed " + std::to_string(store.frontend_seed) + " != expected " +
                           std::to_string(*expect.frontend_seed));
  }
}

TargetStore load_targets(const std::string& path, const TargetExpectation& expect) {
  auto store = deserialize_targets(read_file_bytes(path));
  validate_targets(store, expect);
  return store;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractViolation("cosine_similarity: size mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace onelatent::targets
