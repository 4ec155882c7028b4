#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"

using namespace invdesign;

namespace {

GeometryEncoding random_enc(Rng& rng) {
    GeometryEncoding e;
    do {
        for (auto& b : e.edge_present) b = uniform01(rng) < 0.5;
    } while (std::none_of(e.edge_present.begin(), e.edge_present.end(), [](bool b) { return b; }));
    e.outer_len = uniform(rng, 0.05, 0.5);
    e.inner_len = uniform(rng, 0.05, 0.9);
    e.angle_deg = e.has(Edge::TopLeft) ? uniform(rng, 0.0, 90.0) : 90.0;
    return e;
}

int count_local_minima(const std::vector<double>& v) {
    int n = 0;
    for (std::size_t i = 1; i + 1 < v.size(); ++i)
        if (v[i] < v[i - 1] && v[i] < v[i + 1]) ++n;
    return n;
}

}  // namespace

TEST(Surrogate, SingleVerticalEdge) {
    GeometryEncoding e;
    e.set(Edge::TopRight, true);
    e.outer_len = 0.45;  // dip at 450 nm, inside the grid
    const auto [h, v] = simulate_spectra(e, {Metal::Gold, 1.0}, {});
    for (double x : h.values) EXPECT_EQ(x, 1.0);
    EXPECT_EQ(count_local_minima(v.values), 1);
    const auto ref = oracle::spectrum(e, 1.0, 1);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(v.values[i], ref[i], 1e-12);
}

TEST(Surrogate, MatchesScalarOracle) {
    Rng rng(21);
    for (int i = 0; i < 200; ++i) {
        const auto e = random_enc(rng);
        const double eps = uniform(rng, 1.0, 3.0);
        const auto [h, v] = simulate_spectra(e, {Metal::Gold, eps}, {});
        const auto rh = oracle::spectrum(e, eps, 0);
        const auto rv = oracle::spectrum(e, eps, 1);
        for (std::size_t k = 0; k < rh.size(); ++k) {
            ASSERT_NEAR(h.values[k], rh[k], 1e-12);
            ASSERT_NEAR(v.values[k], rv[k], 1e-12);
        }
    }
}

TEST(Surrogate, NonDefaultGridAndConstants) {
    GeometryEncoding e;
    e.set(Edge::Inner, true);
    e.set(Edge::BottomLeft, true);
    e.outer_len = 0.35;
    e.inner_len = 0.6;
    const SpectrumGrid grid{37, 500.0, 1900.0};
    const SurrogateConstants c{3.0, 40.0, 0.7, 300.0};
    const auto [h, v] = simulate_spectra(e, {Metal::Gold, 2.2}, grid, c);
    const auto rh = oracle::spectrum(e, 2.2, 0, 37, 500, 1900, 3.0, 40, 0.7, 300);
    const auto rv = oracle::spectrum(e, 2.2, 1, 37, 500, 1900, 3.0, 40, 0.7, 300);
    ASSERT_EQ(h.values.size(), 37u);
    for (std::size_t k = 0; k < 37; ++k) {
        EXPECT_NEAR(h.values[k], rh[k], 1e-12);
        EXPECT_NEAR(v.values[k], rv[k], 1e-12);
    }
}

TEST(Surrogate, MirrorInvarianceIsExact) {
    Rng rng(22);
    for (int i = 0; i < 1000; ++i) {
        auto e = random_enc(rng);
        e.angle_deg = 90.0;
        const Material m{Metal::Gold, uniform(rng, 1.0, 3.0)};
        const auto mirrored = mirror_encoding(e);
        ASSERT_TRUE(mirrored);
        EXPECT_EQ(simulate_spectra(e, m, {}), simulate_spectra(*mirrored, m, {}));
    }
    // Tilted edges: mirror at the segment level.
    for (int i = 0; i < 200; ++i) {
        const auto e = random_enc(rng);
        const Material m{Metal::Gold, uniform(rng, 1.0, 3.0)};
        const auto segs = edge_segments(e);
        EXPECT_EQ(simulate_segments(segs, m, {}), simulate_segments(mirror_segments(segs), m, {}));
    }
}

TEST(Surrogate, EpsilonRedShift) {
    Rng rng(23);
    for (int i = 0; i < 1000; ++i) {
        const auto e = random_enc(rng);
        const double h1 = uniform(rng, 1.0, 3.0);
        const double h2 = uniform(rng, h1, 3.0);
        if (!(h1 < h2)) continue;
        const auto segs = edge_segments(e);
        const auto a = dip_centers(segs, {Metal::Gold, h1});
        const auto b = dip_centers(segs, {Metal::Gold, h2});
        ASSERT_EQ(a.horizontal.size(), b.horizontal.size());
        ASSERT_EQ(a.vertical.size(), b.vertical.size());
        for (std::size_t k = 0; k < a.horizontal.size(); ++k) EXPECT_GT(b.horizontal[k], a.horizontal[k]);
        for (std::size_t k = 0; k < a.vertical.size(); ++k) EXPECT_GT(b.vertical[k], a.vertical[k]);
    }
}

TEST(Surrogate, ValuesInUnitInterval) {
    Rng rng(24);
    for (int i = 0; i < 500; ++i) {
        const auto e = random_enc(rng);
        const auto [h, v] = simulate_spectra(e, {Metal::Gold, uniform(rng, 1.0, 3.0)}, {});
        for (double x : h.values) ASSERT_TRUE(x >= 0.0 && x <= 1.0);
        for (double x : v.values) ASSERT_TRUE(x >= 0.0 && x <= 1.0);
    }
}

TEST(Surrogate, OverlappingDipsClampAtZero) {
    GeometryEncoding e;
    for (Edge x : {Edge::BottomLeft, Edge::TopRight, Edge::BottomRight}) e.set(x, true);
    e.set(Edge::Inner, true);
    e.outer_len = 0.4;
    const auto [h, v] = simulate_spectra(e, {Metal::Gold, 1.0}, {});
    EXPECT_EQ(*std::min_element(v.values.begin(), v.values.end()), 0.0);
}

TEST(Surrogate, InvalidMaterial) {
    GeometryEncoding e;
    e.set(Edge::Inner, true);
    EXPECT_THROW(simulate_spectra(e, {Metal::Gold, 0.99}, {}), InvalidMaterial);
    EXPECT_THROW(simulate_spectra(e, {Metal::Gold, 3.01}, {}), InvalidMaterial);
    EXPECT_THROW(simulate_spectra(e, {Metal::Gold, NAN}, {}), InvalidMaterial);
    EXPECT_THROW(simulate_spectra(e, {Metal::Gold, 1.0}, {1, 400, 1600}), ConfigError);
}
