#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "onelatent/model/tokenizer.hpp"
#include "onelatent/targets/targets.hpp"
#include "onelatent/util/binio.hpp"
#include "onelatent/util/error.hpp"
#include "onelatent/util/rng.hpp"

using namespace onelatent;
using namespace onelatent::targets;

namespace {

render::RenderConfig canvas() {
  render::RenderConfig c;
  c.width = c.height = 256;
  c.padding = 8;
  c.font_min = 6;
  c.font_max = 24;
  return c;
}

ReferenceFrontEndConfig fe_config(std::size_t d) {
  ReferenceFrontEndConfig c;
  c.grid = 8;
  c.sub_blocks = 4;
  c.d = d;
  c.seed = 3;
  return c;
}

model::MicroTransformer frozen(std::size_t d) {
  model::ModelConfig c;
  c.vocab_size = 8;
  c.d = static_cast<std::uint32_t>(d);
  c.layers = 1;
  c.heads = 2;
  c.max_seq_len = 80;
  c.ff_mult = 2;
  c.rng_seed = 4;
  return model::MicroTransformer(c);
}

TargetStore sample_store() {
  TargetStore s;
  s.d = 3;
  s.frozen_hash = sha256(std::string_view("frozen"));
  s.frontend_seed = 9;
  s.add("b", {1.0, -2.5, 1e-300});
  s.add("a", {0.1, 0.2, 0.3});
  s.add("c", {-0.0, 4.0, 5.0});
  return s;
}

}  // namespace

TEST_CASE("an all-white image encodes to zero vectors") {
  render::RenderedImage img;
  img.width = img.height = 256;
  img.pixels.assign(256 * 256, 255);
  for (bool global : {false, true}) {
    auto cfg = fe_config(16);
    cfg.global_context = global;
    const ReferenceFrontEnd fe(cfg);
    const auto e = encode_image(img, fe);
    CHECK(e.size() == 64);
    for (const auto& v : e) {
      for (double x : v) CHECK(x == 0.0);
    }
  }
}

TEST_CASE("patch statistics see ink only where it was drawn") {
  render::RenderedImage img;
  img.width = img.height = 256;
  img.pixels.assign(256 * 256, 255);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) img.pixels[static_cast<std::size_t>(y) * 256 + x] = 0;
  }
  const ReferenceFrontEnd fe(fe_config(16));
  const auto first = fe.patch_features(img, 0);
  const auto other = fe.patch_features(img, 9);
  double ink = 0;
  for (double x : first) ink += std::abs(x);
  CHECK(ink > 0);
  for (double x : other) CHECK(x == 0.0);
  const auto global = fe.global_features(img);
  CHECK(global.size() == fe.global_dim());
  double sum = 0;
  for (double x : global) sum += x;
  CHECK(std::abs(sum) < 1e-9);
}

TEST_CASE("target extraction is deterministic and distinguishes different texts") {
  const auto cfg = canvas();
  const ReferenceFrontEnd fe(fe_config(16));
  const auto m = frozen(16);
  const auto a = render::render("Alex is a wumpus. Alex is a yumpus.", cfg);
  const auto b = render::render("Sam is a zumpus. Sam is not a dumpus.", cfg);
  const auto ta = extract_target(a, fe, m, model::Tokenizer::kBos);
  const auto ta2 = extract_target(a, fe, m, model::Tokenizer::kBos);
  const auto tb = extract_target(b, fe, m, model::Tokenizer::kBos);
  CHECK(ta == ta2);
  CHECK(ta.size() == 16);
  CHECK(cosine_similarity(ta, tb) < 0.999);
}

TEST_CASE("extraction refuses a width mismatch or an over-long visual sequence") {
  const auto img = render::render("x", canvas());
  CHECK_THROWS_AS(extract_target(img, ReferenceFrontEnd(fe_config(8)), frozen(16), 1), ContractViolation);
  auto wide = fe_config(16);
  wide.grid = 16;
  CHECK_THROWS_AS(extract_target(img, ReferenceFrontEnd(wide), frozen(16), 1), OverflowError);
}

TEST_CASE("target store layout and byte-exact round trip") {
  const auto s = sample_store();
  const auto bytes = serialize_targets(s);
  std::size_t records = 0;
  for (const auto& [id, v] : s.vectors) records += 4 + id.size() + 8 * v.size();
  CHECK(bytes.size() == TargetStore::kHeaderBytes + records);
  CHECK(TargetStore::kHeaderBytes == 58);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "OLTS");
  const auto back = deserialize_targets(bytes);
  CHECK(back.d == s.d);
  CHECK(back.frozen_hash == s.frozen_hash);
  CHECK(back.frontend_seed == s.frontend_seed);
  CHECK(back.vectors == s.vectors);
  CHECK(std::signbit(back.at("c")[0]));
  CHECK(serialize_targets(back) == bytes);
}

TEST_CASE("malformed stores are format errors") {
  const auto s = sample_store();
  auto bytes = serialize_targets(s);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(deserialize_targets(trailing), FormatError);
  // Swap the first two records ("a" and "b", 4 + 1 + 24 bytes each).
  auto swapped = bytes;
  const std::size_t h = TargetStore::kHeaderBytes, r = 29;
  std::swap_ranges(swapped.begin() + h, swapped.begin() + h + r, swapped.begin() + h + r);
  CHECK_THROWS_AS(deserialize_targets(swapped), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_targets(magic), FormatError);
  CHECK_THROWS_AS(deserialize_targets(std::span(bytes).first(20)), FormatError);
}

TEST_CASE("stale stores are detected on every header field") {
  const auto s = sample_store();
  const auto path = (std::filesystem::temp_directory_path() / "onelatent_targets_test.olts").string();
  store_targets(s, path);
  CHECK_NOTHROW(load_targets(path, {3, s.frozen_hash, 9}));
  CHECK_THROWS_AS(load_targets(path, {4, std::nullopt, std::nullopt}), StaleTargetError);
  CHECK_THROWS_AS(load_targets(path, {std::nullopt, sha256(std::string_view("other")), std::nullopt}), StaleTargetError);
  CHECK_THROWS_AS(load_targets(path, {std::nullopt, std::nullopt, 10}), StaleTargetError);
  std::filesystem::remove(path);
}

TEST_CASE("store rejects wrong widths and non-finite components") {
  TargetStore s;
  s.d = 2;
  CHECK_THROWS_AS(s.add("x", {1.0}), ContractViolation);
  CHECK_THROWS_AS(s.add("x", {1.0, std::nan("")}), NumericFault);
  CHECK_THROWS_AS(s.at("missing"), ContractViolation);
}

TEST_CASE("cosine similarity") {
  const std::vector<double> a{1, 0}, b{0, 2}, c{3, 0};
  CHECK(cosine_similarity(a, b) == 0.0);
  CHECK(cosine_similarity(a, c) == doctest::Approx(1.0));
}
