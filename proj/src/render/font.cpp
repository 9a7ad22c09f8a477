#include "onelatent/render/font.hpp"

#include <algorithm>
#include <iterator>

namespace onelatent::render {

namespace {

constexpr Glyph kGlyphs[] = {
#include "font_data.inc"
};

const Glyph* find(char32_t cp) {
  const auto* it = std::find_if(std::begin(kGlyphs), std::end(kGlyphs), [cp](const Glyph& g) { return g.code == cp; });
  return it == std::end(kGlyphs) ? nullptr : it;
}

}  // namespace

bool has_glyph(char32_t cp) { return find(cp) != nullptr; }

const Glyph& glyph_for(char32_t cp) {
  if (const Glyph* g = find(cp)) return *g;
  return *find(U'?');
}

}  // namespace onelatent::render
