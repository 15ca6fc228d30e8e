#include "maskboot/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace maskboot::plot {

namespace {

// 3×5 bitmap glyphs, one row per 3-bit mask.
const std::array<std::array<std::uint8_t, 5>, 12> kGlyphs = {{
    {7, 5, 5, 5, 7},  // 0
    {2, 6, 2, 2, 7},  // 1
    {7, 1, 7, 4, 7},  // 2
    {7, 1, 7, 1, 7},  // 3
    {5, 5, 7, 1, 1},  // 4
    {7, 4, 7, 1, 7},  // 5
    {7, 4, 7, 5, 7},  // 6
    {7, 1, 1, 1, 1},  // 7
    {7, 5, 7, 5, 7},  // 8
    {7, 5, 7, 1, 7},  // 9
    {0, 0, 0, 0, 2},  // .
    {0, 0, 7, 0, 0},  // -
}};

const std::array<std::array<std::uint8_t, 3>, 6> kPalette = {{
    {31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14}, {148, 103, 189}, {23, 190, 207}}};

struct Canvas {
    RgbImage img;
    explicit Canvas(int w, int h) : img(h, w) { std::fill(img.rgb.begin(), img.rgb.end(), 255); }

    void put(int x, int y, std::array<std::uint8_t, 3> c) {
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
        for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
    }
    void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            put(x0, y0, c);
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
    void text(int x, int y, const std::string& s, std::array<std::uint8_t, 3> c, int scale = 2) {
        for (char ch : s) {
            int g = -1;
            if (ch >= '0' && ch <= '9') g = ch - '0';
            if (ch == '.') g = 10;
            if (ch == '-') g = 11;
            if (g >= 0)
                for (int r = 0; r < 5; ++r)
                    for (int col = 0; col < 3; ++col)
                        if (kGlyphs[g][r] & (4 >> col))
                            for (int a = 0; a < scale; ++a)
                                for (int b = 0; b < scale; ++b) put(x + col * scale + b, y + r * scale + a, c);
            x += 4 * scale;
        }
    }
};

std::string fmt(double v) {
    char buf[32];
    if (std::abs(v - std::round(v)) < 1e-9)
        std::snprintf(buf, sizeof buf, "%.0f", v);
    else
        std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::vector<double> union_ticks(const std::vector<Series>& series) {
    std::vector<double> xs;
    for (const auto& s : series) xs.insert(xs.end(), s.x.begin(), s.x.end());
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    return xs;
}

RgbImage render(const LineChart& chart) {
    Canvas cv(chart.width, chart.height);
    const int left = 56, right = chart.width - 16, top = 16, bottom = chart.height - 40;
    const std::array<std::uint8_t, 3> ink = {0, 0, 0}, grid = {225, 225, 225};

    double x_lo = 0.0, x_hi = 1.0;
    if (!chart.x_ticks.empty()) {
        x_lo = chart.x_ticks.front();
        x_hi = chart.x_ticks.back();
    }
    if (x_hi <= x_lo) {
        x_lo -= 1.0;
        x_hi += 1.0;
    }
    const double y_lo = chart.y_min, y_hi = chart.y_max > chart.y_min ? chart.y_max : chart.y_min + 1.0;
    auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (right - left))); };
    auto py = [&](double y) {
        return bottom - static_cast<int>(std::lround((std::clamp(y, y_lo, y_hi) - y_lo) / (y_hi - y_lo) * (bottom - top)));
    };

    for (int i = 0; i <= 4; ++i) {
        const double y = y_lo + (y_hi - y_lo) * i / 4.0;
        cv.line(left, py(y), right, py(y), grid);
        cv.line(left - 4, py(y), left, py(y), ink);
        cv.text(4, py(y) - 5, fmt(y), ink);
    }
    for (double x : chart.x_ticks) {
        cv.line(px(x), bottom, px(x), bottom + 4, ink);
        const std::string label = fmt(x);
        cv.text(px(x) - static_cast<int>(label.size()) * 4, bottom + 8, label, ink);
    }
    cv.line(left, top, left, bottom, ink);
    cv.line(left, bottom, right, bottom, ink);

    for (std::size_t s = 0; s < chart.series.size(); ++s) {
        const auto& ser = chart.series[s];
        const auto color = kPalette[s % kPalette.size()];
        for (std::size_t i = 0; i < ser.x.size(); ++i) {
            const int x = px(ser.x[i]), y = py(ser.y[i]);
            if (i > 0) cv.line(px(ser.x[i - 1]), py(ser.y[i - 1]), x, y, color);
            for (int a = -2; a <= 2; ++a)
                for (int b = -2; b <= 2; ++b) cv.put(x + a, y + b, color);
        }
    }
    return cv.img;
}

}  // namespace maskboot::plot
