#pragma once

// Analytic stand-in for full-wave transmission simulation.
//
// Every drawn edge acts as a dipole antenna along each polarization axis:
// its length projected onto the axis sets a Lorentzian transmission dip at
//     lambda0 = k * L_proj[nm] * sqrt(epsilon_host)
// and the dips add up:
//     T(lambda) = clamp(1 - sum A * G^2 / ((lambda - lambda0)^2 + G^2), 0, 1).
// This is NOT a physical model. It only reproduces polarization sensitivity
// to projected edge length and the red shift with the host permittivity.
// Edges with zero projection on an axis are invisible to that polarization.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"

namespace invdesign {

struct SpectrumGrid {
    int n_points = 200;
    double lambda_min = 400.0;  // nm
    double lambda_max = 1600.0;

    double wavelength(int i) const {
        return lambda_min + (lambda_max - lambda_min) * static_cast<double>(i) / (n_points - 1);
    }
    bool operator==(const SpectrumGrid&) const = default;
};

inline void validate(const SpectrumGrid& g) {
    if (g.n_points < 2) throw ConfigError("spectrum grid needs at least 2 points");
    if (!(g.lambda_min < g.lambda_max) || !std::isfinite(g.lambda_min) || !std::isfinite(g.lambda_max))
        throw ConfigError("spectrum grid requires lambda_min < lambda_max");
}

/// Transmission sampled on a uniform wavelength grid; values in [0, 1].
struct Spectrum {
    SpectrumGrid grid;
    std::vector<double> values;
    bool operator==(const Spectrum&) const = default;
};

enum class Metal { Gold };

inline constexpr double kMinEpsilonHost = 1.0;
inline constexpr double kMaxEpsilonHost = 3.0;

struct Material {
    Metal metal = Metal::Gold;
    double epsilon_host = 1.0;
    bool operator==(const Material&) const = default;
};

inline void validate(const Material& m) {
    if (m.metal != Metal::Gold) throw InvalidMaterial("only gold is supported");
    if (!std::isfinite(m.epsilon_host) || m.epsilon_host < kMinEpsilonHost || m.epsilon_host > kMaxEpsilonHost)
        throw InvalidMaterial("epsilon_host must lie in [1, 3], got " + std::to_string(m.epsilon_host));
}

struct SurrogateConstants {
    double k = 2.5;
    double linewidth_nm = 60.0;
    double depth = 0.5;
    double canvas_nm = 400.0;  // physical size of the full canvas side
    bool operator==(const SurrogateConstants&) const = default;
};

enum class Polarization { Horizontal, Vertical };

/// Resonance centres per polarization, ascending.
struct DipCenters {
    std::vector<double> horizontal;
    std::vector<double> vertical;
};

inline DipCenters dip_centers(std::span<const StrokeSegment> segs, const Material& mat,
                              const SurrogateConstants& c = {}) {
    validate(mat);
    DipCenters out;
    const double scale = c.k * c.canvas_nm * std::sqrt(mat.epsilon_host);
    for (const auto& s : segs) {
        const double ph = std::abs(s.du) * s.length;
        const double pv = std::abs(s.dv) * s.length;
        if (ph > 0.0) out.horizontal.push_back(scale * ph);
        if (pv > 0.0) out.vertical.push_back(scale * pv);
    }
    // Canonical summation order: mirrored shapes list their edges in a
    // different order but must produce bit-identical spectra.
    std::sort(out.horizontal.begin(), out.horizontal.end());
    std::sort(out.vertical.begin(), out.vertical.end());
    return out;
}

inline Spectrum transmission(std::span<const double> centers, const SpectrumGrid& grid,
                             const SurrogateConstants& c = {}) {
    validate(grid);
    Spectrum sp{grid, std::vector<double>(static_cast<std::size_t>(grid.n_points), 1.0)};
    const double g2 = c.linewidth_nm * c.linewidth_nm;
    for (int i = 0; i < grid.n_points; ++i) {
        const double lambda = grid.wavelength(i);
        double absorbed = 0.0;
        for (double l0 : centers) {
            const double dl = lambda - l0;
            absorbed += c.depth * g2 / (dl * dl + g2);
        }
        sp.values[static_cast<std::size_t>(i)] = std::clamp(1.0 - absorbed, 0.0, 1.0);
    }
    return sp;
}

/// (horizontal-polarization spectrum, vertical-polarization spectrum)
inline std::pair<Spectrum, Spectrum> simulate_segments(std::span<const StrokeSegment> segs, const Material& mat,
                                                       const SpectrumGrid& grid, const SurrogateConstants& c = {}) {
    const auto dips = dip_centers(segs, mat, c);
    return {transmission(dips.horizontal, grid, c), transmission(dips.vertical, grid, c)};
}

inline std::pair<Spectrum, Spectrum> simulate_spectra(const GeometryEncoding& enc, const Material& mat,
                                                      const SpectrumGrid& grid, const SurrogateConstants& c = {}) {
    validate(mat);
    const auto segs = edge_segments(enc);
    return simulate_segments(segs, mat, grid, c);
}

}  // namespace invdesign
