#pragma once

// Plain-text graymap ("P2") output. Real values map to round(255 * clamp(v, 0, 1)).

#include <algorithm>
#include <cmath>
#include <string>

#include "geometry.hpp"
#include "nn.hpp"

namespace invdesign {

inline int gray_level(double v) {
    if (!(v > 0.0)) return 0;  // also maps NaN to black
    return int(std::lround(255.0 * std::min(v, 1.0)));
}

inline std::string to_pgm(const PixelGrid& g) {
    std::string out = "P2\n" + std::to_string(g.d) + " " + std::to_string(g.d) + "\n255\n";
    for (int r = 0; r < g.d; ++r) {
        for (int c = 0; c < g.d; ++c) {
            if (c) out += ' ';
            out += std::to_string(gray_level(g(r, c)));
        }
        out += '\n';
    }
    return out;
}

inline std::string to_pgm(const BinaryImage& img) {
    PixelGrid g(img.size());
    const auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) g.values[i] = px[i];
    return to_pgm(g);
}

}  // namespace invdesign
