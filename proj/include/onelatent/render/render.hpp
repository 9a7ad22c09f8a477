#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "onelatent/util/hash.hpp"

namespace onelatent::render {

struct RenderConfig {
  int width = 1024;
  int height = 1024;
  int padding = 20;
  int font_min = 8;
  int font_max = 48;
  int dpi = 100;
  double quality_threshold = 0.95;
  int max_quality_iterations = 3;
  int padding_floor = 4;

  void validate() const;
  std::string canonical_json() const;
  Digest hash() const;
};

// Collapses whitespace, maps LaTeX-like commands to Unicode (\times, \leq,
// \geq, \div, \neq, \rightarrow, \cdot), drops other command backslashes,
// strips braces and dollar signs, trims.
std::string normalize_cot(std::string_view text);

std::u32string utf8_to_u32(std::string_view s);
std::string u32_to_utf8(std::u32string_view s);

// Characters per line at font size f: floor((W - 2p) / (f/2)).
int chars_per_line(int width, int padding, int font_size);
// Line gap at font size f: floor(f/4).
int line_gap(int font_size);
// Canvas height used by `lines` lines: L*(f+g) + 2p.
int layout_height(int lines, int font_size, int padding);

// Greedy whitespace wrap at `width` code points; words longer than a line are
// split at character level.
std::vector<std::u32string> wrap_lines(std::u32string_view text, int width);

struct FontFit {
  int font_size = 0;
  int chars_per_line = 0;
  int line_gap = 0;
  std::vector<std::u32string> lines;
  bool fallback = false;  // no size satisfied the height constraint
};

// Largest f in [font_min, font_max] whose wrapped layout satisfies
// L*(f+g) + 2p <= H. Without one, falls back to font_min with trailing
// whitespace clipped.
FontFit fit_font(std::string_view normalized, const RenderConfig& cfg);

struct Layout {
  int font_size = 0;
  int line_count = 0;
  int chars_per_line = 0;
  int line_gap = 0;
  int padding = 0;
  int dpi = 0;
  double quality = 0.0;
  int iterations = 0;
  bool degraded = false;
  std::vector<std::u32string> lines;
};

struct RenderedImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 255 = white
  Layout layout;

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// Legibility score in [0, 1] for a rendered image.
class QualityChecker {
 public:
  virtual ~QualityChecker() = default;
  virtual double score(const RenderedImage& img) const = 0;
};

// Reference checker: fraction of non-space character cells whose pixels
// correlate with the expected scaled glyph at or above `min_correlation`.
class TemplateQualityChecker : public QualityChecker {
 public:
  explicit TemplateQualityChecker(double min_correlation = 0.9) : min_corr_(min_correlation) {}
  double score(const RenderedImage& img) const override;

 private:
  double min_corr_;
};

double quality_check(const RenderedImage& img);

// Draws pre-wrapped lines at font size f with padding p (no search).
RenderedImage rasterize(const std::vector<std::u32string>& lines, int font_size, int padding, const RenderConfig& cfg);

// Fit-to-canvas search plus the quality loop: when the score is below the
// threshold, padding is halved toward `padding_floor` and the text is
// re-rendered; once padding is at the floor the result is marked degraded.
// Returns the best-scoring attempt.
RenderedImage render(std::string_view normalized, const RenderConfig& cfg, const QualityChecker& checker);
RenderedImage render(std::string_view normalized, const RenderConfig& cfg);

// Binary PGM (P5, maxval 255).
std::vector<std::uint8_t> encode_pgm(const RenderedImage& img);
RenderedImage decode_pgm(std::span<const std::uint8_t> bytes);
void write_pgm(const RenderedImage& img, const std::string& path);
void write_png(const RenderedImage& img, const std::string& path);
// Pixels only; the layout is not stored in the file.
RenderedImage read_png(const std::string& path);

}  // namespace onelatent::render
