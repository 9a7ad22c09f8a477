#include "onelatent/render/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <sstream>

#include "onelatent/render/font.hpp"
#include "onelatent/util/binio.hpp"
#include "onelatent/util/error.hpp"

namespace onelatent::render {

void RenderConfig::validate() const {
  if (width != height) throw ContractViolation("RenderConfig: canvas must be square");
  if (font_min < 2 || font_min > font_max) throw ContractViolation("RenderConfig: need 2 <= font_min <= font_max");
  if (padding < 0 || 2 * padding >= width) throw ContractViolation("RenderConfig: padding must satisfy 0 <= 2p < W");
  if (quality_threshold < 0.0 || quality_threshold > 1.0) throw ContractViolation("RenderConfig: threshold outside [0,1]");
  if (max_quality_iterations < 1) throw ContractViolation("RenderConfig: need at least one quality iteration");
  if (padding_floor < 0) throw ContractViolation("RenderConfig: negative padding floor");
}

std::string RenderConfig::canonical_json() const {
  nlohmann::ordered_json j;
  j["width"] = width;
  j["height"] = height;
  j["padding"] = padding;
  j["font_min"] = font_min;
  j["font_max"] = font_max;
  j["dpi"] = dpi;
  j["quality_threshold"] = quality_threshold;
  j["max_quality_iterations"] = max_quality_iterations;
  j["padding_floor"] = padding_floor;
  return j.dump();
}

Digest RenderConfig::hash() const { return sha256(canonical_json()); }

std::u32string utf8_to_u32(std::string_view s) {
  std::u32string out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    char32_t cp = 0;
    std::size_t n = 1;
    if (c < 0x80) {
      cp = c;
    } else if ((c >> 5) == 0x6) {
      cp = c & 0x1F;
      n = 2;
    } else if ((c >> 4) == 0xE) {
      cp = c & 0x0F;
      n = 3;
    } else if ((c >> 3) == 0x1E) {
      cp = c & 0x07;
      n = 4;
    } else {
      out.push_back(U'?');
      ++i;
      continue;
    }
    if (i + n > s.size()) {
      out.push_back(U'?');
      break;
    }
    bool ok = true;
    for (std::size_t k = 1; k < n; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc >> 6) != 0x2) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    out.push_back(ok ? cp : U'?');
    i += ok ? n : 1;
  }
  return out;
}

std::string u32_to_utf8(std::u32string_view s) {
  std::string out;
  for (char32_t cp : s) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

namespace {

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

struct Command {
  std::string_view name;
  std::string_view replacement;
};

constexpr Command kCommands[] = {
    {"times", "×"}, {"leq", "≤"}, {"geq", "≥"},      {"div", "÷"},
    {"neq", "≠"},   {"rightarrow", "→"}, {"cdot", "·"},
};

}  // namespace

std::string normalize_cot(std::string_view text) {
  std::string mapped;
  mapped.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    const char c = text[i];
    if (c == '\\') {
      std::size_t j = i + 1;
      while (j < text.size() && is_alpha(text[j])) ++j;
      const std::string_view name = text.substr(i + 1, j - i - 1);
      const auto* cmd = std::find_if(std::begin(kCommands), std::end(kCommands),
                                     [name](const Command& k) { return k.name == name; });
      if (cmd != std::end(kCommands)) {
        mapped += cmd->replacement;
      } else {
        mapped += name;  // unknown command: keep the word, drop the backslash
      }
      i = j;
    } else if (c == '{' || c == '}' || c == '$') {
      ++i;
    } else {
      mapped.push_back(c);
      ++i;
    }
  }
  std::string out;
  out.reserve(mapped.size());
  bool pending_space = false;
  for (char c : mapped) {
    if (is_ws(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

int chars_per_line(int width, int padding, int font_size) {
  // floor((W - 2p) / (f/2)) == floor(2(W - 2p) / f) in integer arithmetic.
  return (2 * (width - 2 * padding)) / font_size;
}

int line_gap(int font_size) { return font_size / 4; }

int layout_height(int lines, int font_size, int padding) {
  return lines * (font_size + line_gap(font_size)) + 2 * padding;
}

std::vector<std::u32string> wrap_lines(std::u32string_view text, int width) {
  if (width <= 0) throw ContractViolation("wrap_lines: line width must be positive");
  const auto w = static_cast<std::size_t>(width);
  std::vector<std::u32string> lines;
  std::u32string cur;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == U' ') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && text[j] != U' ') ++j;
    std::u32string_view word = text.substr(i, j - i);
    i = j;
    if (!cur.empty() && cur.size() + 1 + word.size() <= w) {
      cur.push_back(U' ');
      cur.append(word);
      continue;
    }
    if (!cur.empty()) {
      lines.push_back(std::move(cur));
      cur.clear();
    }
    while (word.size() > w) {
      lines.emplace_back(word.substr(0, w));
      word.remove_prefix(w);
    }
    cur.assign(word);
  }
  if (!cur.empty()) lines.push_back(std::move(cur));
  return lines;
}

FontFit fit_font(std::string_view normalized, const RenderConfig& cfg) {
  cfg.validate();
  const std::u32string text = utf8_to_u32(normalized);
  if (text.empty()) throw ContractViolation("fit_font: empty text");
  for (int f = cfg.font_max; f >= cfg.font_min; --f) {
    const int m = chars_per_line(cfg.width, cfg.padding, f);
    if (m <= 0) continue;
    auto lines = wrap_lines(text, m);
    if (layout_height(static_cast<int>(lines.size()), f, cfg.padding) <= cfg.height) {
      return FontFit{f, m, line_gap(f), std::move(lines), false};
    }
  }
  const int f = cfg.font_min;
  const int m = chars_per_line(cfg.width, cfg.padding, f);
  if (m <= 0) throw OverflowError("fit_font: no character fits a line at the minimum font size");
  auto lines = wrap_lines(text, m);
  // Only trailing whitespace may be clipped; reasoning text never is.
  while (!lines.empty() && lines.back().find_first_not_of(U' ') == std::u32string::npos) lines.pop_back();
  for (auto& l : lines) {
    while (!l.empty() && l.back() == U' ') l.pop_back();
  }
  return FontFit{f, m, line_gap(f), std::move(lines), true};
}

RenderedImage rasterize(const std::vector<std::u32string>& lines, int font_size, int padding, const RenderConfig& cfg) {
  RenderedImage img;
  img.width = cfg.width;
  img.height = cfg.height;
  img.pixels.assign(static_cast<std::size_t>(cfg.width) * cfg.height, 255);
  const int cell_w = font_size / 2;
  const int gap = line_gap(font_size);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const int y0 = padding + static_cast<int>(li) * (font_size + gap);
    const auto& line = lines[li];
    for (std::size_t ci = 0; ci < line.size(); ++ci) {
      if (line[ci] == U' ') continue;
      const Glyph& g = glyph_for(line[ci]);
      const int x0 = padding + static_cast<int>(ci) * cell_w;
      for (int y = 0; y < font_size; ++y) {
        const int gy = y * kGlyphHeight / font_size;
        for (int x = 0; x < cell_w; ++x) {
          const int gx = x * kGlyphWidth / cell_w;
          if (glyph_pixel(g, gx, gy)) img.pixels[static_cast<std::size_t>(y0 + y) * cfg.width + (x0 + x)] = 0;
        }
      }
    }
  }
  img.layout.font_size = font_size;
  img.layout.line_count = static_cast<int>(lines.size());
  img.layout.chars_per_line = chars_per_line(cfg.width, padding, font_size);
  img.layout.line_gap = gap;
  img.layout.padding = padding;
  img.layout.dpi = cfg.dpi;
  img.layout.lines = lines;
  return img;
}

double TemplateQualityChecker::score(const RenderedImage& img) const {
  const auto& lay = img.layout;
  const int f = lay.font_size;
  const int cell_w = f / 2;
  if (f <= 0 || cell_w <= 0) return 0.0;
  std::size_t total = 0, matched = 0;
  std::vector<int> tmpl(static_cast<std::size_t>(cell_w * f));
  std::vector<int> cell(tmpl.size());
  for (std::size_t li = 0; li < lay.lines.size(); ++li) {
    const int y0 = lay.padding + static_cast<int>(li) * (f + lay.line_gap);
    const auto& line = lay.lines[li];
    for (std::size_t ci = 0; ci < line.size(); ++ci) {
      if (line[ci] == U' ') continue;
      ++total;
      const Glyph& g = glyph_for(line[ci]);
      const int x0 = lay.padding + static_cast<int>(ci) * cell_w;
      int tsum = 0, csum = 0, both = 0;
      for (int y = 0; y < f; ++y) {
        for (int x = 0; x < cell_w; ++x) {
          const auto k = static_cast<std::size_t>(y * cell_w + x);
          tmpl[k] = glyph_pixel(g, x * kGlyphWidth / cell_w, y * kGlyphHeight / f) ? 1 : 0;
          const int px = x0 + x, py = y0 + y;
          const bool inside = px >= 0 && py >= 0 && px < img.width && py < img.height;
          cell[k] = inside && img.at(px, py) < 128 ? 1 : 0;
          tsum += tmpl[k];
          csum += cell[k];
          both += tmpl[k] & cell[k];
        }
      }
      if (tsum == 0) {
        if (csum == 0) ++matched;
        continue;
      }
      // Pearson correlation of the two binary ink masks.
      const double n = static_cast<double>(tmpl.size());
      const double cov = both - tsum * static_cast<double>(csum) / n;
      const double vt = tsum - tsum * static_cast<double>(tsum) / n;
      const double vc = csum - csum * static_cast<double>(csum) / n;
      if (vt <= 0.0 || vc <= 0.0) continue;
      if (cov / std::sqrt(vt * vc) >= min_corr_) ++matched;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

double quality_check(const RenderedImage& img) { return TemplateQualityChecker{}.score(img); }

RenderedImage render(std::string_view normalized, const RenderConfig& cfg, const QualityChecker& checker) {
  cfg.validate();
  RenderConfig attempt = cfg;
  RenderedImage best;
  bool have_best = false;
  bool degraded = false;
  int iterations = 0;
  for (int it = 1; it <= cfg.max_quality_iterations; ++it) {
    iterations = it;
    const FontFit fit = fit_font(normalized, attempt);
    const int need = layout_height(static_cast<int>(fit.lines.size()), fit.font_size, attempt.padding);
    if (need > attempt.height) {
      throw OverflowError("render: text needs " + std::to_string(fit.lines.size()) + " lines at font size " +
                          std::to_string(fit.font_size) + " (" + std::to_string(need) + " px) but the canvas is " +
                          std::to_string(attempt.height) + " px with padding " + std::to_string(attempt.padding));
    }
    RenderedImage img = rasterize(fit.lines, fit.font_size, attempt.padding, attempt);
    img.layout.quality = checker.score(img);
    if (!have_best || img.layout.quality > best.layout.quality) {
      best = std::move(img);
      have_best = true;
    }
    if (best.layout.quality >= cfg.quality_threshold) break;
    if (attempt.padding > cfg.padding_floor) {
      attempt.padding = std::max(cfg.padding_floor, attempt.padding / 2);
    } else {
      degraded = true;
      break;
    }
  }
  best.layout.iterations = iterations;
  best.layout.degraded = degraded || best.layout.quality < cfg.quality_threshold;
  return best;
}

RenderedImage render(std::string_view normalized, const RenderConfig& cfg) {
  return render(normalized, cfg, TemplateQualityChecker{});
}

std::vector<std::uint8_t> encode_pgm(const RenderedImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

RenderedImage decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw FormatError("pgm: expected P5 header");
  RenderedImage img;
  img.width = std::stoi(token());
  img.height = std::stoi(token());
  if (token() != "255") throw FormatError("pgm: only maxval 255 is supported");
  ++pos;  // single whitespace byte before the raster
  const auto n = static_cast<std::size_t>(img.width) * img.height;
  if (bytes.size() - pos != n) throw FormatError("pgm: raster size mismatch");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

void write_pgm(const RenderedImage& img, const std::string& path) { write_file_bytes(path, encode_pgm(img)); }

void write_png(const RenderedImage& img, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("png encoding failed for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, img.pixels.data() + static_cast<std::size_t>(y) * img.width);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

RenderedImage read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot read " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError("png decoding failed for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError(path + " is not an 8-bit grayscale png");
  }
  RenderedImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y) {
    png_read_row(png, img.pixels.data() + static_cast<std::size_t>(y) * img.width, nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace onelatent::render
