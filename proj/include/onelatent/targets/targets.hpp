#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "onelatent/model/transformer.hpp"
#include "onelatent/render/render.hpp"
#include "onelatent/util/hash.hpp"

namespace onelatent::targets {

using Embedding = std::vector<double>;

// Maps an image to a sequence of d-dimensional embeddings.
class VisionFrontEnd {
 public:
  virtual ~VisionFrontEnd() = default;
  virtual std::vector<Embedding> encode(const render::RenderedImage& img) const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t sequence_length() const = 0;
  virtual std::uint64_t seed() const = 0;
};

struct ReferenceFrontEndConfig {
  std::size_t grid = 16;      // G: patches per side
  std::size_t sub_blocks = 8;  // s: sub-blocks per patch side
  std::size_t d = 128;
  std::uint64_t seed = 0;
  double scale = 8.0;  // output scale applied after projection
  bool global_context = true;
};

// Patch statistics plus a frozen random projection. Each patch is split into
// s x s sub-blocks; each sub-block contributes mean darkness, horizontal and
// vertical edge energy, and ink fraction. All four are zero on a white
// background. With global_context, every patch embedding also receives a
// projection of the image-wide sub-block darkness map (Gs x Gs, mean removed),
// standing in for the global attention of a ViT encoder; without it a blank
// patch carries no image information at all.
// An all-white image maps every patch to the zero vector either way.
class ReferenceFrontEnd : public VisionFrontEnd {
 public:
  explicit ReferenceFrontEnd(const ReferenceFrontEndConfig& cfg);

  std::vector<Embedding> encode(const render::RenderedImage& img) const override;
  std::size_t dim() const override { return cfg_.d; }
  std::size_t sequence_length() const override { return cfg_.grid * cfg_.grid; }
  std::uint64_t seed() const override { return cfg_.seed; }

  std::size_t local_dim() const { return 4 * cfg_.sub_blocks * cfg_.sub_blocks; }
  std::size_t global_dim() const { return cfg_.global_context ? cfg_.grid * cfg_.grid * cfg_.sub_blocks * cfg_.sub_blocks : 0; }
  // Local statistics for one patch (row-major patch index), before projection.
  std::vector<double> patch_features(const render::RenderedImage& img, std::size_t patch) const;
  // Sub-block darkness over the whole image minus its mean, row-major.
  std::vector<double> global_features(const render::RenderedImage& img) const;
  const ReferenceFrontEndConfig& config() const { return cfg_; }

 private:
  ReferenceFrontEndConfig cfg_;
  std::vector<double> proj_;         // [local_dim, d]
  std::vector<double> global_proj_;  // [global_dim, d]
};

std::vector<Embedding> encode_image(const render::RenderedImage& img, const VisionFrontEnd& fe);

struct TargetVector {
  std::string sample_id;
  std::vector<double> v;
};

// Forwards [BOS; visual embeddings] through the frozen model and returns the
// final hidden state at `position` (default: the last visual position).
std::vector<double> extract_target(const render::RenderedImage& img, const VisionFrontEnd& fe,
                                   const model::MicroTransformer& frozen, int bos_id,
                                   std::optional<std::size_t> position = std::nullopt);

// Binary target store:
//   "OLTS" | version u16 | d u32 | count u64 | frozen model hash [32] | front-end seed u64
//   count records sorted by sample id: id (u32 length + UTF-8) | f64[d]
struct TargetStore {
  static constexpr std::uint16_t kVersion = 1;
  static constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 8 + 32 + 8;

  std::uint32_t d = 0;
  Digest frozen_hash{};
  std::uint64_t frontend_seed = 0;
  std::map<std::string, std::vector<double>> vectors;

  void add(const std::string& id, std::vector<double> v);
  const std::vector<double>& at(const std::string& id) const;
  bool contains(const std::string& id) const { return vectors.contains(id); }
  std::size_t size() const { return vectors.size(); }
};

std::vector<std::uint8_t> serialize_targets(const TargetStore& store);
TargetStore deserialize_targets(std::span<const std::uint8_t> bytes);
void store_targets(const TargetStore& store, const std::string& path);

struct TargetExpectation {
  std::optional<std::uint32_t> d;
  std::optional<Digest> frozen_hash;
  std::optional<std::uint64_t> frontend_seed;
};

// Throws StaleTargetError when the header disagrees with `expect`.
TargetStore load_targets(const std::string& path, const TargetExpectation& expect = {});
void validate_targets(const TargetStore& store, const TargetExpectation& expect);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace onelatent::targets
