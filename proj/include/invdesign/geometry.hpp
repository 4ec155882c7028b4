#pragma once

// H-template shape model and its binary rasterizer.
//
// Canvas convention: continuous coordinates centred on the canvas middle,
// u to the right, v downwards, lengths in canvas fractions. The inner edge is
// a horizontal bar centred on the canvas; outer edges hang off its two
// endpoints. Bottom edges point down, the top-right edge points up and the
// top-left edge leaves the left endpoint at `angle_deg` from the inner edge,
// leaning towards the canvas interior (90 = straight up, 0 = lying on the
// inner edge).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace invdesign {

enum class Edge : int { TopLeft = 0, BottomLeft = 1, TopRight = 2, BottomRight = 3, Inner = 4 };

inline constexpr std::array<Edge, 5> kAllEdges{Edge::TopLeft, Edge::BottomLeft, Edge::TopRight,
                                               Edge::BottomRight, Edge::Inner};

inline constexpr std::string_view edge_name(Edge e) {
    switch (e) {
        case Edge::TopLeft: return "top-left";
        case Edge::BottomLeft: return "bottom-left";
        case Edge::TopRight: return "top-right";
        case Edge::BottomRight: return "bottom-right";
        case Edge::Inner: return "inner";
    }
    return "?";
}

inline constexpr double kMaxOuterLen = 0.5;
inline constexpr double kMaxInnerLen = 0.9;

/// Eight degrees of freedom: five presence bits, two lengths, one angle.
struct GeometryEncoding {
    std::array<bool, 5> edge_present{};  // ordered as kAllEdges
    double outer_len = 0.25;
    double inner_len = 0.5;
    double angle_deg = 90.0;

    bool has(Edge e) const { return edge_present[static_cast<std::size_t>(e)]; }
    void set(Edge e, bool present) { edge_present[static_cast<std::size_t>(e)] = present; }

    int outer_count() const {
        return int(has(Edge::TopLeft)) + int(has(Edge::BottomLeft)) + int(has(Edge::TopRight)) +
               int(has(Edge::BottomRight));
    }

    std::array<double, 8> to_vector() const {
        std::array<double, 8> v{};
        for (std::size_t i = 0; i < 5; ++i) v[i] = edge_present[i] ? 1.0 : 0.0;
        v[5] = outer_len;
        v[6] = inner_len;
        v[7] = angle_deg;
        return v;
    }

    static GeometryEncoding from_vector(std::span<const double, 8> v) {
        GeometryEncoding enc;
        for (std::size_t i = 0; i < 5; ++i) {
            if (v[i] != 0.0 && v[i] != 1.0)
                throw InvalidEncoding("presence value must be 0 or 1");
            enc.edge_present[i] = v[i] == 1.0;
        }
        enc.outer_len = v[5];
        enc.inner_len = v[6];
        enc.angle_deg = v[7];
        return enc;
    }

    bool operator==(const GeometryEncoding&) const = default;
};

inline void validate(const GeometryEncoding& enc) {
    if (!std::isfinite(enc.outer_len) || enc.outer_len <= 0.0 || enc.outer_len > kMaxOuterLen)
        throw InvalidEncoding("outer_len must lie in (0, 0.5], got " + std::to_string(enc.outer_len));
    if (!std::isfinite(enc.inner_len) || enc.inner_len <= 0.0 || enc.inner_len > kMaxInnerLen)
        throw InvalidEncoding("inner_len must lie in (0, 0.9], got " + std::to_string(enc.inner_len));
    if (!std::isfinite(enc.angle_deg) || enc.angle_deg < 0.0 || enc.angle_deg > 90.0)
        throw InvalidEncoding("angle_deg must lie in [0, 90], got " + std::to_string(enc.angle_deg));
}

/// d x d raster of {0, 1}, row-major.
class BinaryImage {
public:
    BinaryImage() = default;
    explicit BinaryImage(int d) : d_(d), pixels_(checked_area(d), 0) {}

    int size() const noexcept { return d_; }
    std::uint8_t operator()(int row, int col) const { return pixels_[index(row, col)]; }
    void set(int row, int col, bool on) { pixels_[index(row, col)] = on ? 1 : 0; }

    std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

    std::size_t count() const {
        return static_cast<std::size_t>(std::count(pixels_.begin(), pixels_.end(), std::uint8_t{1}));
    }

    bool operator==(const BinaryImage&) const = default;

private:
    static std::size_t checked_area(int d) {
        if (d <= 0) throw ConfigError("image side must be positive");
        return static_cast<std::size_t>(d) * static_cast<std::size_t>(d);
    }
    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(d_) + static_cast<std::size_t>(col);
    }

    int d_ = 0;
    std::vector<std::uint8_t> pixels_;
};

struct RasterConfig {
    int d = 64;
    int stroke_w = 4;
    bool operator==(const RasterConfig&) const = default;
};

inline void validate(const RasterConfig& cfg) {
    if (cfg.d <= 0) throw ConfigError("raster d must be positive");
    if (cfg.stroke_w <= 0) throw ConfigError("stroke_w must be positive");
    if (4 * cfg.stroke_w >= cfg.d) throw ConfigError("stroke_w must be smaller than d / 4");
}

/// One drawn edge: start point, unit direction and length, all in canvas
/// fractions relative to the canvas centre.
struct StrokeSegment {
    Edge edge;
    double u0, v0;
    double du, dv;
    double length;
};

namespace detail {

// Exact at the two endpoints so that angle 90 is a true vertical stroke.
inline std::pair<double, double> cos_sin_deg(double deg) {
    if (deg == 90.0) return {0.0, 1.0};
    if (deg == 0.0) return {1.0, 0.0};
    const double rad = deg * std::numbers::pi / 180.0;
    return {std::cos(rad), std::sin(rad)};
}

}  // namespace detail

/// Present edges of the template, in kAllEdges order.
inline std::vector<StrokeSegment> edge_segments(const GeometryEncoding& enc) {
    validate(enc);
    const double half = 0.5 * enc.inner_len;
    const auto [c, s] = detail::cos_sin_deg(enc.angle_deg);
    std::vector<StrokeSegment> out;
    for (Edge e : kAllEdges) {
        if (!enc.has(e)) continue;
        switch (e) {
            case Edge::TopLeft: out.push_back({e, -half, 0.0, c, -s, enc.outer_len}); break;
            case Edge::BottomLeft: out.push_back({e, -half, 0.0, 0.0, 1.0, enc.outer_len}); break;
            case Edge::TopRight: out.push_back({e, half, 0.0, 0.0, -1.0, enc.outer_len}); break;
            case Edge::BottomRight: out.push_back({e, half, 0.0, 0.0, 1.0, enc.outer_len}); break;
            case Edge::Inner: out.push_back({e, -half, 0.0, 1.0, 0.0, enc.inner_len}); break;
        }
    }
    return out;
}

/// Reflection across the vertical centre line (u -> -u).
inline std::vector<StrokeSegment> mirror_segments(std::span<const StrokeSegment> segs) {
    std::vector<StrokeSegment> out(segs.begin(), segs.end());
    for (auto& s : out) {
        s.u0 = -s.u0;
        s.du = -s.du;
    }
    return out;
}

struct RasterResult {
    BinaryImage image;
    bool clipped = false;  // some stroke rectangle leaves the canvas
};

namespace detail {

struct PixelRect {
    double ax, ay, dx, dy, length, half_w;

    bool contains(double px, double py) const {
        const double rx = px - ax;
        const double ry = py - ay;
        const double along = rx * dx + ry * dy;
        const double across = ry * dx - rx * dy;
        return along >= 0.0 && along <= length && std::abs(across) <= half_w;
    }
};

inline PixelRect to_pixels(const StrokeSegment& s, const RasterConfig& cfg) {
    const double d = cfg.d;
    return {s.u0 * d, s.v0 * d, s.du, s.dv, s.length * d, 0.5 * cfg.stroke_w};
}

}  // namespace detail

/// Draws the given segments: a pixel is 1 iff its centre lies inside any
/// stroke rectangle (closed). Pixel (r, c) has centre (c + 0.5 - d/2, r + 0.5 - d/2).
inline RasterResult rasterize_segments(std::span<const StrokeSegment> segs, const RasterConfig& cfg) {
    validate(cfg);
    RasterResult res{BinaryImage(cfg.d), false};
    const double half_d = 0.5 * cfg.d;
    for (const auto& seg : segs) {
        const auto rect = detail::to_pixels(seg, cfg);
        const double nx = -rect.dy * rect.half_w;
        const double ny = rect.dx * rect.half_w;
        const double ex = rect.dx * rect.length;
        const double ey = rect.dy * rect.length;
        const std::array<double, 4> xs{rect.ax + nx, rect.ax - nx, rect.ax + ex + nx, rect.ax + ex - nx};
        const std::array<double, 4> ys{rect.ay + ny, rect.ay - ny, rect.ay + ey + ny, rect.ay + ey - ny};
        const auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
        const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
        if (*xmin < -half_d || *xmax > half_d || *ymin < -half_d || *ymax > half_d) res.clipped = true;

        const int c0 = std::clamp(static_cast<int>(std::floor(*xmin + half_d)) - 1, 0, cfg.d - 1);
        const int c1 = std::clamp(static_cast<int>(std::ceil(*xmax + half_d)) + 1, 0, cfg.d - 1);
        const int r0 = std::clamp(static_cast<int>(std::floor(*ymin + half_d)) - 1, 0, cfg.d - 1);
        const int r1 = std::clamp(static_cast<int>(std::ceil(*ymax + half_d)) + 1, 0, cfg.d - 1);
        for (int r = r0; r <= r1; ++r) {
            const double py = r + 0.5 - half_d;
            for (int c = c0; c <= c1; ++c) {
                if (rect.contains(c + 0.5 - half_d, py)) res.image.set(r, c, true);
            }
        }
    }
    return res;
}

inline RasterResult rasterize_with_flags(const GeometryEncoding& enc, const RasterConfig& cfg) {
    const auto segs = edge_segments(enc);
    return rasterize_segments(segs, cfg);
}

inline BinaryImage rasterize(const GeometryEncoding& enc, const RasterConfig& cfg) {
    return rasterize_with_flags(enc, cfg).image;
}

/// Column order reversed.
inline BinaryImage mirror_horizontal(const BinaryImage& img) {
    const int d = img.size();
    BinaryImage out(d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) out.set(r, d - 1 - c, img(r, c) != 0);
    return out;
}

/// Row order reversed.
inline BinaryImage mirror_vertical(const BinaryImage& img) {
    const int d = img.size();
    BinaryImage out(d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) out.set(d - 1 - r, c, img(r, c) != 0);
    return out;
}

/// Left-right mirror at the encoding level: swaps left and right presence
/// bits. Returns nullopt when the mirror is not expressible, i.e. a tilted
/// top-left edge (the template has no tilted top-right edge).
inline std::optional<GeometryEncoding> mirror_encoding(const GeometryEncoding& enc) {
    if (enc.has(Edge::TopLeft) && enc.angle_deg != 90.0) return std::nullopt;
    GeometryEncoding out = enc;
    out.set(Edge::TopLeft, enc.has(Edge::TopRight));
    out.set(Edge::TopRight, enc.has(Edge::TopLeft));
    out.set(Edge::BottomLeft, enc.has(Edge::BottomRight));
    out.set(Edge::BottomRight, enc.has(Edge::BottomLeft));
    if (out.has(Edge::TopLeft)) out.angle_deg = 90.0;
    return out;
}

/// Holdout predicate: inner edge plus exactly one outer edge, any angle.
inline bool is_L_family(const GeometryEncoding& enc) {
    return enc.has(Edge::Inner) && enc.outer_count() == 1;
}

/// Looser reading of the holdout family that also takes the "U" formed by
/// the inner edge and both top edges when the top-left edge is steeper than
/// 70 degrees.
inline bool is_L_or_steep_U(const GeometryEncoding& enc) {
    if (is_L_family(enc)) return true;
    return enc.has(Edge::Inner) && enc.has(Edge::TopLeft) && enc.has(Edge::TopRight) &&
           !enc.has(Edge::BottomLeft) && !enc.has(Edge::BottomRight) && enc.angle_deg > 70.0;
}

using HoldoutPredicate = std::function<bool(const GeometryEncoding&)>;

inline HoldoutPredicate holdout_predicate(std::string_view name) {
    if (name == "l_family") return is_L_family;
    if (name == "l_or_steep_u") return is_L_or_steep_U;
    throw ConfigError("unknown holdout predicate '" + std::string(name) + "'");
}

}  // namespace invdesign
