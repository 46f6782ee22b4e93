// Copyright (c) 2026 the famsec authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "famsec/common.hpp"

namespace famsec {

// RGB image, float32 HWC layout, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;  // height * width * 3

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(std::size_t(h) * w * 3, 0.0f) {}

    float& at(int y, int x, int c) { return data[(std::size_t(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return data[(std::size_t(y) * width + x) * 3 + c]; }
};

inline Image crop(const Image& img, int y0, int x0, int h, int w) {
    FAMSEC_REQUIRE(y0 >= 0 && x0 >= 0 && y0 + h <= img.height && x0 + w <= img.width,
                   contract_error, "crop window outside image bounds");
    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

inline Image center_crop(const Image& img, int size) {
    FAMSEC_REQUIRE(img.height >= size && img.width >= size, contract_error,
                   "center_crop: image smaller than crop size");
    return crop(img, (img.height - size) / 2, (img.width - size) / 2, size, size);
}

inline Image resize_bilinear(const Image& img, int h, int w) {
    FAMSEC_REQUIRE(h >= 1 && w >= 1 && img.height >= 1 && img.width >= 1, contract_error,
                   "resize_bilinear: empty image");
    Image out(h, w);
    const double sy = h > 1 ? double(img.height - 1) / (h - 1) : 0.0;
    const double sx = w > 1 ? double(img.width - 1) / (w - 1) : 0.0;
    for (int y = 0; y < h; ++y) {
        double fy = y * sy;
        int y0 = int(fy);
        int y1 = std::min(y0 + 1, img.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < w; ++x) {
            double fx = x * sx;
            int x0 = int(fx);
            int x1 = std::min(x0 + 1, img.width - 1);
            double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                double v = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                           wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
                out.at(y, x, c) = float(v);
            }
        }
    }
    return out;
}

inline float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

}  // namespace famsec
