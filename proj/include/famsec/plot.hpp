// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "famsec/image.hpp"
#include "famsec/matrix.hpp"
#include "famsec/png_io.hpp"

// Small plot renderer for the harness outputs. The CSVs are the testable
// artifact; these PNGs are for eyeballs only.

namespace famsec {
namespace plot {

struct Color {
    float r, g, b;
};

inline constexpr Color kPalette[6] = {
    {0.13f, 0.47f, 0.71f},  // blue
    {0.84f, 0.19f, 0.15f},  // red
    {0.17f, 0.63f, 0.17f},  // green
    {0.58f, 0.40f, 0.74f},  // purple
    {1.00f, 0.60f, 0.00f},  // orange
    {0.35f, 0.35f, 0.35f},  // gray
};

class Canvas {
public:
    Canvas(int w, int h) : img_(h, w) {
        for (auto& v : img_.data) v = 1.0f;  // white
    }

    int width() const { return img_.width; }
    int height() const { return img_.height; }

    void set(int x, int y, Color c) {
        if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
        img_.at(y, x, 0) = c.r;
        img_.at(y, x, 1) = c.g;
        img_.at(y, x, 2) = c.b;
    }

    void dot(int x, int y, Color c, int radius = 2) {
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx)
                if (dx * dx + dy * dy <= radius * radius) set(x + dx, y + dy, c);
    }

    void line(int x0, int y0, int x1, int y1, Color c) {
        int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            int e2 = 2 * err;
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

    void save(const fs::path& path) const { png::write_file(path, img_); }

private:
    Image img_;
};

namespace detail {
struct Range {
    double lo, hi;
    double span() const { return hi - lo > 0 ? hi - lo : 1.0; }
};

inline Range padded(double lo, double hi) {
    double pad = (hi - lo) * 0.06;
    if (pad <= 0) pad = 0.5;
    return {lo - pad, hi + pad};
}
}  // namespace detail

// Scatter of 2-D points colored by group id, with framed axes.
template <typename T>
void scatter(const fs::path& path, const Matrix<T>& points, const std::vector<int>& groups,
             int width = 640, int height = 480) {
    Canvas canvas(width, height);
    const int m = 40;  // margin
    Color frame{0.2f, 0.2f, 0.2f};
    canvas.line(m, height - m, width - m, height - m, frame);
    canvas.line(m, m, m, height - m, frame);

    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (int i = 0; i < points.rows(); ++i) {
        xlo = std::min(xlo, double(points(i, 0)));
        xhi = std::max(xhi, double(points(i, 0)));
        ylo = std::min(ylo, double(points(i, 1)));
        yhi = std::max(yhi, double(points(i, 1)));
    }
    auto xr = detail::padded(xlo, xhi), yr = detail::padded(ylo, yhi);
    for (int i = 0; i < points.rows(); ++i) {
        int px = m + int((double(points(i, 0)) - xr.lo) / xr.span() * (width - 2 * m));
        int py = height - m - int((double(points(i, 1)) - yr.lo) / yr.span() * (height - 2 * m));
        Color c = kPalette[std::size_t(groups[std::size_t(i)]) % 6];
        canvas.dot(px, py, c);
    }
    // group legend swatches along the top
    std::vector<int> distinct;
    for (int g : groups)
        if (std::find(distinct.begin(), distinct.end(), g) == distinct.end()) distinct.push_back(g);
    std::sort(distinct.begin(), distinct.end());
    for (std::size_t k = 0; k < distinct.size(); ++k)
        for (int dy = 0; dy < 10; ++dy)
            for (int dx = 0; dx < 18; ++dx)
                canvas.set(m + int(k) * 26 + dx, 12 + dy,
                           kPalette[std::size_t(distinct[k]) % 6]);
    canvas.save(path);
}

// Polyline chart: one series per row of `ys`, shared x positions.
inline void lines(const fs::path& path, const std::vector<double>& xs,
                  const std::vector<std::vector<double>>& ys, int width = 640, int height = 480) {
    Canvas canvas(width, height);
    const int m = 40;
    Color frame{0.2f, 0.2f, 0.2f};
    canvas.line(m, height - m, width - m, height - m, frame);
    canvas.line(m, m, m, height - m, frame);
    if (xs.empty()) {
        canvas.save(path);
        return;
    }

    double xlo = *std::min_element(xs.begin(), xs.end());
    double xhi = *std::max_element(xs.begin(), xs.end());
    double ylo = 1e300, yhi = -1e300;
    for (const auto& s : ys)
        for (double v : s) {
            ylo = std::min(ylo, v);
            yhi = std::max(yhi, v);
        }
    auto xr = detail::padded(xlo, xhi), yr = detail::padded(ylo, yhi);
    auto px = [&](double x) { return m + int((x - xr.lo) / xr.span() * (width - 2 * m)); };
    auto py = [&](double y) { return height - m - int((y - yr.lo) / yr.span() * (height - 2 * m)); };

    for (std::size_t s = 0; s < ys.size(); ++s) {
        Color c = kPalette[s % 6];
        for (std::size_t i = 0; i + 1 < ys[s].size() && i + 1 < xs.size(); ++i)
            canvas.line(px(xs[i]), py(ys[s][i]), px(xs[i + 1]), py(ys[s][i + 1]), c);
        for (std::size_t i = 0; i < ys[s].size() && i < xs.size(); ++i)
            canvas.dot(px(xs[i]), py(ys[s][i]), c, 2);
    }
    canvas.save(path);
}

}  // namespace plot
}  // namespace famsec
