#!/usr/bin/env python3
"""Regenerate the embedded 8x16 monospace glyph table from DejaVu Sans Mono.

Usage: tools/gen_font.py /usr/share/fonts/truetype/dejavu/DejaVuSansMono.ttf > src/render/font_data.inc

The generated table is checked in; rendering never touches a system font at
runtime.
"""
import sys

from PIL import Image, ImageDraw, ImageFont

CELL_W, CELL_H = 8, 16
EXTRA = [0x00D7, 0x2264, 0x2265, 0x00F7, 0x2260, 0x2192, 0x00B7]


def main():
    font = ImageFont.truetype(sys.argv[1], 13)
    ascent, _ = font.getmetrics()
    codepoints = list(range(0x20, 0x7F)) + EXTRA
    print("// Generated by tools/gen_font.py from DejaVu Sans Mono (Bitstream Vera license).")
    print("// One entry per glyph: code point, then 16 rows, bit 7 = leftmost pixel.")
    for cp in codepoints:
        img = Image.new("L", (CELL_W, CELL_H), 0)
        draw = ImageDraw.Draw(img)
        draw.text((0, 13 - ascent), chr(cp), font=font, fill=255)
        rows = []
        for y in range(CELL_H):
            bits = 0
            for x in range(CELL_W):
                if img.getpixel((x, y)) >= 110:
                    bits |= 0x80 >> x
            rows.append(f"0x{bits:02X}")
        print(f"{{0x{cp:04X}, {{{', '.join(rows)}}}}},")


if __name__ == "__main__":
    main()
