#pragma once

#include <array>
#include <cstdint>

namespace onelatent::render {

// Embedded 8x16 monospace bitmap font: printable ASCII plus the Unicode
// symbols produced by CoT normalization. Code points without a glyph fall
// back to '?'.
inline constexpr int kGlyphWidth = 8;
inline constexpr int kGlyphHeight = 16;

struct Glyph {
  char32_t code;
  std::array<std::uint8_t, kGlyphHeight> rows;  // bit 7 = leftmost pixel
};

const Glyph& glyph_for(char32_t cp);
bool has_glyph(char32_t cp);

inline bool glyph_pixel(const Glyph& g, int x, int y) { return (g.rows[static_cast<std::size_t>(y)] >> (7 - x)) & 1; }

}  // namespace onelatent::render
