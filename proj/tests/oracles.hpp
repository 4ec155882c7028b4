#pragma once

// Independent reference implementations used as test oracles. They are
// written for clarity, not speed, and share no code with the library beyond
// its value types.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include <invdesign/invdesign.hpp>

namespace oracle {

using namespace invdesign;

// --- rasterizer ------------------------------------------------------------

struct Quad {
    std::array<double, 4> x, y;  // corners in order around the rectangle
};

// Stroke rectangles in pixel units relative to the canvas centre, from the
// template rules restated directly.
inline std::vector<Quad> stroke_quads(const GeometryEncoding& e, int d, int stroke_w) {
    const double half_inner = 0.5 * e.inner_len * d;
    const double outer = e.outer_len * d;
    const double hw = 0.5 * stroke_w;
    std::vector<std::array<double, 4>> segs;  // x0, y0, x1, y1 (y down)
    const double a = e.angle_deg * std::numbers::pi / 180.0;
    const double ca = e.angle_deg == 90.0 ? 0.0 : std::cos(a);
    const double sa = e.angle_deg == 90.0 ? 1.0 : std::sin(a);
    if (e.has(Edge::TopLeft)) segs.push_back({-half_inner, 0, -half_inner + outer * ca, -outer * sa});
    if (e.has(Edge::BottomLeft)) segs.push_back({-half_inner, 0, -half_inner, outer});
    if (e.has(Edge::TopRight)) segs.push_back({half_inner, 0, half_inner, -outer});
    if (e.has(Edge::BottomRight)) segs.push_back({half_inner, 0, half_inner, outer});
    if (e.has(Edge::Inner)) segs.push_back({-half_inner, 0, half_inner, 0});
    std::vector<Quad> quads;
    for (const auto& s : segs) {
        const double len = std::hypot(s[2] - s[0], s[3] - s[1]);
        const double nx = -(s[3] - s[1]) / len * hw, ny = (s[2] - s[0]) / len * hw;
        quads.push_back({{s[0] + nx, s[2] + nx, s[2] - nx, s[0] - nx}, {s[1] + ny, s[3] + ny, s[3] - ny, s[1] - ny}});
    }
    return quads;
}

// Point in convex quad (closed) by the sign of the four edge cross products.
inline bool inside(const Quad& q, double px, double py) {
    bool neg = false, pos = false;
    for (int i = 0; i < 4; ++i) {
        const int j = (i + 1) % 4;
        const double cr = (q.x[j] - q.x[i]) * (py - q.y[i]) - (q.y[j] - q.y[i]) * (px - q.x[i]);
        if (cr < 0) neg = true;
        if (cr > 0) pos = true;
    }
    return !(neg && pos);
}

inline BinaryImage rasterize(const GeometryEncoding& e, int d, int stroke_w) {
    BinaryImage img(d);
    const auto quads = stroke_quads(e, d, stroke_w);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) {
            const double px = c + 0.5 - 0.5 * d, py = r + 0.5 - 0.5 * d;
            for (const auto& q : quads)
                if (inside(q, px, py)) img.set(r, c, true);
        }
    return img;
}

// --- surrogate -------------------------------------------------------------

inline std::vector<double> spectrum(const GeometryEncoding& e, double eps, int polarization_vertical, int n = 200,
                                    double lmin = 400, double lmax = 1600, double k = 2.5, double gamma = 60,
                                    double depth = 0.5, double canvas = 400) {
    std::vector<double> lengths;  // projected lengths in canvas fractions
    const double a = e.angle_deg * std::numbers::pi / 180.0;
    auto add = [&](bool present, double h, double v) {
        if (!present) return;
        const double L = polarization_vertical ? v : h;
        if (L > 0) lengths.push_back(L);
    };
    const double tl_h = e.angle_deg == 90.0 ? 0.0 : e.outer_len * std::cos(a);
    const double tl_v = e.angle_deg == 90.0 ? e.outer_len : e.outer_len * std::sin(a);
    add(e.has(Edge::TopLeft), std::abs(tl_h), std::abs(tl_v));
    add(e.has(Edge::BottomLeft), 0, e.outer_len);
    add(e.has(Edge::TopRight), 0, e.outer_len);
    add(e.has(Edge::BottomRight), 0, e.outer_len);
    add(e.has(Edge::Inner), e.inner_len, 0);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double lam = lmin + (lmax - lmin) * i / (n - 1);
        double t = 1.0;
        for (double L : lengths) {
            const double l0 = k * L * canvas * std::sqrt(eps);
            t -= depth * gamma * gamma / ((lam - l0) * (lam - l0) + gamma * gamma);
        }
        out[std::size_t(i)] = std::clamp(t, 0.0, 1.0);
    }
    return out;
}

// --- convolution -----------------------------------------------------------
// Same term orders as documented in conv.hpp.

inline double at(const std::vector<double>& img, int c, int d, int y, int x) {
    if (y < 0 || y >= d || x < 0 || x >= d) return 0.0;
    return img[(std::size_t(c) * d + y) * d + x];
}

inline std::vector<double> conv_forward(int in_ch, int out_ch, int d, int k, const std::vector<double>& in,
                                        const std::vector<double>& kernel, const std::vector<double>& bias) {
    const int p = k / 2;
    std::vector<double> out(std::size_t(out_ch) * d * d);
    for (int o = 0; o < out_ch; ++o)
        for (int y = 0; y < d; ++y)
            for (int x = 0; x < d; ++x) {
                double acc = 0.0;
                for (int i = 0; i < in_ch; ++i)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            acc = std::fma(kernel[((std::size_t(o) * in_ch + i) * k + ky) * k + kx],
                                           at(in, i, d, y + ky - p, x + kx - p), acc);
                out[(std::size_t(o) * d + y) * d + x] = acc + bias[std::size_t(o)];
            }
    return out;
}

inline std::vector<double> conv_backward_input(int in_ch, int out_ch, int d, int k, const std::vector<double>& g,
                                               const std::vector<double>& kernel) {
    const int p = k / 2;
    std::vector<double> gin(std::size_t(in_ch) * d * d);
    for (int i = 0; i < in_ch; ++i)
        for (int y = 0; y < d; ++y)
            for (int x = 0; x < d; ++x) {
                double acc = 0.0;
                for (int o = 0; o < out_ch; ++o)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            acc = std::fma(kernel[((std::size_t(o) * in_ch + i) * k + (k - 1 - ky)) * k + (k - 1 - kx)],
                                           at(g, o, d, y + ky - p, x + kx - p), acc);
                gin[(std::size_t(i) * d + y) * d + x] = acc;
            }
    return gin;
}

inline std::vector<double> conv_backward_kernel(int in_ch, int out_ch, int d, int k, const std::vector<double>& in,
                                                const std::vector<double>& g) {
    const int p = k / 2;
    std::vector<double> gk(std::size_t(out_ch) * in_ch * k * k);
    for (int o = 0; o < out_ch; ++o)
        for (int i = 0; i < in_ch; ++i)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    double chain[8] = {};
                    for (int y = 0; y < d; ++y)
                        for (int x = 0; x < d; ++x)
                            chain[x % 8] = std::fma(at(g, o, d, y, x), at(in, i, d, y + ky - p, x + kx - p), chain[x % 8]);
                    double sum = chain[0];
                    for (int l = 1; l < 8; ++l) sum += chain[l];
                    gk[((std::size_t(o) * in_ch + i) * k + ky) * k + kx] = sum;
                }
    return gk;
}

// --- network ---------------------------------------------------------------

inline std::vector<double> dense_relu(const Tensor& w, const Tensor& b, const std::vector<double>& x) {
    std::vector<double> y(std::size_t(w.shape[0]));
    for (int r = 0; r < w.shape[0]; ++r) {
        double s = b[std::size_t(r)];
        for (int c = 0; c < w.shape[1]; ++c) s += w[std::size_t(r) * w.shape[1] + c] * x[std::size_t(c)];
        y[std::size_t(r)] = std::max(s, 0.0);
    }
    return y;
}

// Scalar forward pass (plain sums, so it agrees with the library only to
// rounding).
inline std::vector<double> forward(const ModelParams& p, const std::vector<double>& s1, const std::vector<double>& s2,
                                   double eps) {
    const auto& a = p.arch;
    std::vector<double> concat;
    const std::vector<double> inputs[3] = {s1, s2, {eps}};
    for (int br = 0; br < 3; ++br) {
        std::vector<double> h = inputs[br];
        for (const auto& l : p.branches[std::size_t(br)]) h = dense_relu(l.weight, l.bias, h);
        concat.insert(concat.end(), h.begin(), h.end());
    }
    std::vector<double> f = dense_relu(p.fusion.weight, p.fusion.bias, concat);
    auto conv_relu = [&](const ConvLayer& L, int in_ch, int out_ch, const std::vector<double>& in, bool relu) {
        const int d = a.d, k = a.kernel, pad = k / 2;
        std::vector<double> out(std::size_t(out_ch) * d * d);
        for (int o = 0; o < out_ch; ++o)
            for (int y = 0; y < d; ++y)
                for (int x = 0; x < d; ++x) {
                    double s = L.bias[std::size_t(o)];
                    for (int i = 0; i < in_ch; ++i)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx)
                                s += L.kernel[((std::size_t(o) * in_ch + i) * k + ky) * k + kx] *
                                     at(in, i, d, y + ky - pad, x + kx - pad);
                    out[(std::size_t(o) * d + y) * d + x] = relu ? std::max(s, 0.0) : s;
                }
        return out;
    };
    auto c1 = conv_relu(p.convs[0], 1, a.channels, f, true);
    auto c2 = conv_relu(p.convs[1], a.channels, a.channels, c1, true);
    return conv_relu(p.convs[2], a.channels, 1, c2, !a.linear_head);
}

inline double loss(const std::vector<double>& g_hat, const BinaryImage& g) {
    double s = 0.0;
    for (int r = 0; r < g.size(); ++r)
        for (int c = 0; c < g.size(); ++c) {
            const double diff = g_hat[std::size_t(r) * g.size() + c] - g(r, c);
            s += diff * diff;
        }
    return s;
}

}  // namespace oracle
