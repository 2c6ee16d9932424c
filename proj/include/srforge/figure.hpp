#pragma once

#include <array>
#include <cctype>
#include <string>
#include <vector>

#include "srforge/raster.hpp"

namespace srforge::fig {

namespace detail {

/// 5x7 bitmap glyphs (one byte per row, low 5 bits used). Charset covers the
/// caption digits and the method names used in comparison figures.
struct Glyph {
    char ch;
    std::array<std::uint8_t, 7> rows;
};

inline const Glyph* find_glyph(char ch) {
    static const Glyph table[] = {
        {'0', {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110}},
        {'1', {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
        {'2', {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111}},
        {'3', {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110}},
        {'4', {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010}},
        {'5', {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110}},
        {'6', {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110}},
        {'7', {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000}},
        {'8', {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110}},
        {'9', {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100}},
        {'.', {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00110, 0b00110}},
        {'/', {0b00001, 0b00010, 0b00010, 0b00100, 0b01000, 0b01000, 0b10000}},
        {'-', {0b00000, 0b00000, 0b00000, 0b11111, 0b00000, 0b00000, 0b00000}},
        {' ', {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000}},
        {'A', {0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001}},
        {'B', {0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110}},
        {'C', {0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110}},
        {'E', {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111}},
        {'F', {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000}},
        {'G', {0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111}},
        {'I', {0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
        {'L', {0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111}},
        {'M', {0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001}},
        {'N', {0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001}},
        {'P', {0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000}},
        {'R', {0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001}},
        {'S', {0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110}},
        {'T', {0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100}},
        {'U', {0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110}},
    };
    for (const auto& g : table)
        if (g.ch == ch) return &g;
    return nullptr;
}

} // namespace detail

constexpr int kGlyphWidth = 5;
constexpr int kGlyphHeight = 7;
constexpr int kGlyphAdvance = 6;

/// Stamp text into every band of the canvas at (x, y), top-left anchored.
/// Unknown characters render as blanks; clipping at the borders is silent.
inline void draw_text(Raster& canvas, int x, int y, const std::string& text, double value = 1.0) {
    int cursor = x;
    for (const char raw : text) {
        const char ch = char(std::toupper(static_cast<unsigned char>(raw)));
        const auto* glyph = detail::find_glyph(ch);
        if (glyph) {
            for (int gy = 0; gy < kGlyphHeight; ++gy)
                for (int gx = 0; gx < kGlyphWidth; ++gx) {
                    if (!((glyph->rows[std::size_t(gy)] >> (kGlyphWidth - 1 - gx)) & 1)) continue;
                    const int py = y + gy, px = cursor + gx;
                    if (px < 0 || py < 0 || px >= canvas.width || py >= canvas.height) continue;
                    for (int b = 0; b < canvas.bands; ++b) canvas.at(b, py, px) = value;
                }
        }
        cursor += kGlyphAdvance;
    }
}

inline int text_width(const std::string& text) { return int(text.size()) * kGlyphAdvance; }

struct MontageCell {
    Raster image;        // 3-band, [0,1]
    std::string caption; // rendered under the image
};

/// Grid montage: rows of cells under a header line per column. Every image in
/// the grid must share dimensions; cells are upscaled by an integer factor so
/// captions fit, then laid out with uniform margins on a dark canvas.
inline Raster render_montage(const std::vector<std::string>& column_headers,
                             const std::vector<std::vector<MontageCell>>& rows) {
    require(!rows.empty() && !rows[0].empty(), "figure", "montage needs at least one cell");
    const int cols = int(rows[0].size());
    require(int(column_headers.size()) == cols, "figure",
            "header count must match column count");
    const int img_w = rows[0][0].image.width;
    const int img_h = rows[0][0].image.height;
    int caption_w = 0;
    for (const auto& row : rows) {
        require(int(row.size()) == cols, "figure", "ragged montage rows");
        for (const auto& cell : row) {
            require(cell.image.bands == 3, "figure", "montage cells must be 3-band");
            require(cell.image.width == img_w && cell.image.height == img_h, "figure",
                    "montage cells must share dimensions");
            caption_w = std::max(caption_w, text_width(cell.caption));
        }
    }
    for (const auto& h : column_headers) caption_w = std::max(caption_w, text_width(h));

    // Integer display scale so the caption fits under the image.
    int scale = 1;
    while (img_w * scale < caption_w && scale < 16) ++scale;
    const int cell_w = img_w * scale;
    const int cell_h = img_h * scale;

    const int margin = 6;
    const int caption_h = kGlyphHeight + 4;
    const int header_h = kGlyphHeight + 6;
    const int total_w = margin + cols * (cell_w + margin);
    const int total_h = header_h + margin + int(rows.size()) * (cell_h + caption_h + margin);

    Raster canvas(total_w, total_h, 3, 0.08);
    for (int c = 0; c < cols; ++c) {
        const int x0 = margin + c * (cell_w + margin);
        draw_text(canvas, x0, 4, column_headers[std::size_t(c)], 0.95);
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const int y0 = header_h + margin + int(r) * (cell_h + caption_h + margin);
        for (int c = 0; c < cols; ++c) {
            const MontageCell& cell = rows[r][std::size_t(c)];
            const int x0 = margin + c * (cell_w + margin);
            for (int b = 0; b < 3; ++b)
                for (int y = 0; y < cell_h; ++y)
                    for (int x = 0; x < cell_w; ++x)
                        canvas.at(b, y0 + y, x0 + x) =
                            std::clamp(cell.image.at(b, y / scale, x / scale), 0.0, 1.0);
            draw_text(canvas, x0, y0 + cell_h + 2, cell.caption, 0.95);
        }
    }
    return canvas;
}

} // namespace srforge::fig
