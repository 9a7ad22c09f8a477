#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary.

#include <cmath>
#include <string>
#include <vector>

#include "onelatent/latent/latent.hpp"
#include "onelatent/numeric/ops.hpp"
#include "onelatent/render/render.hpp"

namespace oracle {

// Latent filling by recomputation: for each latent slot in order, run a fresh
// full forward over the prefix ending just before it (with the slots filled
// so far), read the hidden row there, and pin it as the slot's embedding.
// A last full forward produces the trace.
inline onelatent::model::ForwardTrace two_pass_fill(const onelatent::latent::AssembledSequence& seq,
                                                   const onelatent::model::MicroTransformer& m,
                                                   const onelatent::latent::LatentConfig& cfg) {
  namespace nm = onelatent::numeric;
  const bool block = cfg.layer_source == onelatent::latent::LayerSource::block;
  onelatent::model::Overrides o;
  for (std::size_t l : seq.latent_positions) {
    const std::vector<int> prefix(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(l));
    onelatent::model::Overrides po;
    for (const auto& [p, v] : o) {
      if (p < l) po.emplace(p, v);
    }
    const auto t = m.forward(prefix, po, block);
    const auto& src = block ? t.layer_hiddens[cfg.source_layer] : t.final_hidden;
    o.emplace(l, nm::slice_rows(src, l - 1, l));
  }
  return m.forward(seq.ids, o, block);
}

// Line count of a greedy whitespace wrap at `width` code points, counted
// without building the lines: a word that does not fit on the current line
// starts a new one, and a word longer than a line occupies ceil(len/width)
// lines with its tail left open for the next word.
inline long greedy_line_count(const std::u32string& text, int width) {
  long lines = 0;
  long cur = -1;  // length of the open line, -1 when none
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == U' ') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && text[j] != U' ') ++j;
    const long len = static_cast<long>(j - i);
    i = j;
    if (cur >= 0 && cur + 1 + len <= width) {
      cur += 1 + len;
      continue;
    }
    if (cur >= 0) ++lines;
    const long full = (len - 1) / width;
    lines += full;
    cur = len - full * width;
  }
  return cur >= 0 ? lines + 1 : lines;
}

// Largest font size in [font_min, font_max] whose layout fits the canvas at
// padding `padding`, by trying every size; 0 when none fits.
inline int max_fitting_font(const std::string& normalized, const onelatent::render::RenderConfig& cfg, int padding) {
  const auto text = onelatent::render::utf8_to_u32(normalized);
  int best = 0;
  for (int f = cfg.font_min; f <= cfg.font_max; ++f) {
    const int cells = (2 * (cfg.width - 2 * padding)) / f;  // cell width is f/2
    if (cells <= 0) continue;
    const long lines = greedy_line_count(text, cells);
    if (lines * (f + f / 4) + 2L * padding <= cfg.height) best = f;
  }
  return best;
}

// OTC as the published tables compute it: Acc / #O.
inline double otc(double acc, double out) { return out == 0 ? 0.0 : acc / out; }

}  // namespace oracle
