#pragma once
// Line-plot rendering onto an RgbImage: axes, log-scaled x, error bars and a
// small 5x7 bitmap font for tick labels and the legend.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hetcd/png.hpp"

namespace hetcd {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

namespace detail_plot {

struct Glyph {
    char c;
    std::uint8_t rows[7];  // 5-bit rows, MSB = leftmost column
};

inline const Glyph* find_glyph(char c) {
    static const Glyph font[] = {
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
        {'.', {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100}},
        {'-', {0b00000, 0b00000, 0b00000, 0b11111, 0b00000, 0b00000, 0b00000}},
        {'%', {0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011}},
        {'/', {0b00001, 0b00010, 0b00010, 0b00100, 0b01000, 0b01000, 0b10000}},
        {':', {0b00000, 0b01100, 0b01100, 0b00000, 0b01100, 0b01100, 0b00000}},
        {' ', {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000}},
        {'A', {0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001}},
        {'B', {0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110}},
        {'C', {0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110}},
        {'D', {0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100}},
        {'E', {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111}},
        {'F', {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000}},
        {'G', {0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111}},
        {'H', {0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001}},
        {'I', {0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
        {'J', {0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100}},
        {'K', {0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001}},
        {'L', {0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111}},
        {'M', {0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001}},
        {'N', {0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001}},
        {'O', {0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110}},
        {'P', {0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000}},
        {'Q', {0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101}},
        {'R', {0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001}},
        {'S', {0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110}},
        {'T', {0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100}},
        {'U', {0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110}},
        {'V', {0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100}},
        {'W', {0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010}},
        {'X', {0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001}},
        {'Y', {0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100}},
        {'Z', {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111}},
    };
    for (const auto& g : font)
        if (g.c == c) return &g;
    return nullptr;
}

}  // namespace detail_plot

inline void draw_text(RgbImage& img, int x, int y, const std::string& text, Rgb color,
                      int scale = 1) {
    int cx = x;
    for (char raw : text) {
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
        const auto* g = detail_plot::find_glyph(c);
        if (g) {
            for (int r = 0; r < 7; ++r) {
                for (int col = 0; col < 5; ++col) {
                    if (!(g->rows[r] & (1 << (4 - col)))) continue;
                    for (int sy = 0; sy < scale; ++sy)
                        for (int sx = 0; sx < scale; ++sx)
                            img.set(cx + col * scale + sx, y + r * scale + sy, color.r, color.g,
                                    color.b);
                }
            }
        }
        cx += 6 * scale;
    }
}

inline void draw_line(RgbImage& img, int x0, int y0, int x1, int y1, Rgb color) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        img.set(x0, y0, color.r, color.g, color.b);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

struct PlotSeries {
    std::string label;
    Rgb color;
    std::vector<double> x;     // plotted on a log10 axis
    std::vector<double> y;     // mean
    std::vector<double> ylo;   // error bar bottoms (optional, same size as y)
    std::vector<double> yhi;   // error bar tops
};

// F1-vs-npos curves: log-scaled x, y fixed to [0,1], one colored polyline
// with 10th/90th percentile bars per series.
inline RgbImage render_curve_plot(const std::vector<PlotSeries>& series,
                                  const std::string& x_label = "POSITIVE SAMPLES",
                                  const std::string& y_label = "F1") {
    const int W = 900, H = 600, L = 70, R = 30, T = 30, B = 60;
    RgbImage img(W, H, 255);
    const Rgb black{0, 0, 0}, grey{205, 205, 205};

    double xmin = 1e300, xmax = -1e300;
    for (const auto& s : series)
        for (double v : s.x) {
            xmin = std::min(xmin, v);
            xmax = std::max(xmax, v);
        }
    if (!(xmax > 0)) {
        xmin = 1;
        xmax = 10;
    }
    const double lx0 = std::log10(std::max(xmin, 1.0));
    const double lx1 = std::log10(std::max(xmax, xmin + 1.0));
    auto px = [&](double x) {
        const double t = (std::log10(std::max(x, 1e-9)) - lx0) / std::max(lx1 - lx0, 1e-9);
        return L + static_cast<int>(t * (W - L - R));
    };
    auto py = [&](double y) { return H - B - static_cast<int>(std::clamp(y, 0.0, 1.0) * (H - T - B)); };

    for (int i = 0; i <= 10; ++i) {
        const double y = i / 10.0;
        draw_line(img, L, py(y), W - R, py(y), grey);
        char label[16];
        std::snprintf(label, sizeof label, "%.1f", y);
        draw_text(img, L - 30, py(y) - 3, label, black);
    }
    if (!series.empty()) {
        for (double xv : series.front().x) {
            draw_line(img, px(xv), T, px(xv), H - B, grey);
            const std::string label = std::to_string(static_cast<long long>(std::llround(xv)));
            draw_text(img, px(xv) - static_cast<int>(label.size()) * 3, H - B + 8, label, black);
        }
    }
    draw_line(img, L, T, L, H - B, black);
    draw_line(img, L, H - B, W - R, H - B, black);
    draw_text(img, (W - static_cast<int>(x_label.size()) * 6) / 2, H - 24, x_label, black);
    draw_text(img, 8, T, y_label, black);

    int legend_y = T + 10;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const int x = px(s.x[i]), y = py(s.y[i]);
            if (i + 1 < s.x.size()) draw_line(img, x, y, px(s.x[i + 1]), py(s.y[i + 1]), s.color);
            draw_line(img, x - 2, y, x + 2, y, s.color);
            draw_line(img, x, y - 2, x, y + 2, s.color);
            if (i < s.ylo.size() && i < s.yhi.size()) {
                draw_line(img, x, py(s.ylo[i]), x, py(s.yhi[i]), s.color);
                draw_line(img, x - 3, py(s.ylo[i]), x + 3, py(s.ylo[i]), s.color);
                draw_line(img, x - 3, py(s.yhi[i]), x + 3, py(s.yhi[i]), s.color);
            }
        }
        draw_line(img, W - R - 190, legend_y + 3, W - R - 165, legend_y + 3, s.color);
        draw_text(img, W - R - 158, legend_y, s.label, black);
        legend_y += 14;
    }
    return img;
}

}  // namespace hetcd
