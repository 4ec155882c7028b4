#pragma once

// Test-set metrics: thresholded designs scored by IoU, plain and up to the
// four-element flip group (mirrored poses share their spectra).

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "nn.hpp"
#include "surrogate.hpp"
#include "training.hpp"

namespace invdesign {

/// Pixel is 1 iff value >= tau.
inline BinaryImage binarize(const PixelGrid& g_hat, double tau = 0.5) {
    BinaryImage out(g_hat.d);
    for (int r = 0; r < g_hat.d; ++r)
        for (int c = 0; c < g_hat.d; ++c) out.set(r, c, g_hat(r, c) >= tau);
    return out;
}

/// |a ∩ b| / |a ∪ b|, and 1 when both are empty.
inline double iou(const BinaryImage& a, const BinaryImage& b) {
    if (a.size() != b.size()) throw ShapeMismatch("iou: image sizes differ");
    const auto pa = a.pixels();
    const auto pb = b.pixels();
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        inter += std::size_t(pa[i] & pb[i]);
        uni += std::size_t(pa[i] | pb[i]);
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

/// Best iou against g under identity, horizontal, vertical and both flips.
inline double symmetry_aware_iou(const BinaryImage& pred, const BinaryImage& g) {
    if (pred.size() != g.size()) throw ShapeMismatch("symmetry_aware_iou: image sizes differ");
    const BinaryImage h = mirror_horizontal(g);
    const BinaryImage v = mirror_vertical(g);
    const BinaryImage hv = mirror_vertical(h);
    return std::max({iou(pred, g), iou(pred, h), iou(pred, v), iou(pred, hv)});
}

/// Network outputs for each sample, in order.
inline std::vector<PixelGrid> predict(const ModelParams& p, const std::vector<Sample>& samples) {
    constexpr std::size_t kChunk = 64;
    std::vector<PixelGrid> out;
    out.reserve(samples.size());
    ForwardCache cache;
    std::vector<Example> batch;
    const std::size_t plane = std::size_t(p.arch.pixels());
    for (std::size_t lo = 0; lo < samples.size(); lo += kChunk) {
        const std::size_t hi = std::min(samples.size(), lo + kChunk);
        batch.clear();
        for (std::size_t i = lo; i < hi; ++i) batch.push_back(to_example(samples[i]));
        forward_batch(p, batch, cache);
        for (std::size_t s = 0; s < batch.size(); ++s) {
            PixelGrid g(p.arch.d);
            std::copy_n(cache.out.begin() + std::ptrdiff_t(s * plane), plane, g.values.begin());
            out.push_back(std::move(g));
        }
    }
    return out;
}

struct EvalRecord {
    std::string id;
    double loss = 0.0;  // mean per pixel
    double iou = 0.0;
    double sym_iou = 0.0;
    bool operator==(const EvalRecord&) const = default;
};

struct Aggregate {
    double mean = 0.0;
    double median = 0.0;
    bool operator==(const Aggregate&) const = default;
};

struct EvalReport {
    std::vector<EvalRecord> records;
    Aggregate loss, iou, sym_iou;
    double tau = 0.5;
    bool operator==(const EvalReport&) const = default;
};

/// Median averages the two middle values for even counts.
inline Aggregate aggregate(std::vector<double> xs) {
    if (xs.empty()) return {};
    double sum = 0.0;
    for (double x : xs) sum += x;
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    const double med = n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
    return {sum / double(n), med};
}

inline EvalReport make_report(std::vector<EvalRecord> records, double tau) {
    EvalReport rep;
    rep.tau = tau;
    std::vector<double> l, a, s;
    for (const auto& r : records) {
        l.push_back(r.loss);
        a.push_back(r.iou);
        s.push_back(r.sym_iou);
    }
    rep.records = std::move(records);
    rep.loss = aggregate(std::move(l));
    rep.iou = aggregate(std::move(a));
    rep.sym_iou = aggregate(std::move(s));
    return rep;
}

inline EvalReport evaluate_predictions(const std::vector<Sample>& test, const std::vector<PixelGrid>& preds,
                                       double tau) {
    if (test.empty()) throw EmptySplit("evaluation set is empty");
    if (preds.size() != test.size()) throw ShapeMismatch("prediction count differs from sample count");
    std::vector<EvalRecord> recs;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const BinaryImage bin = binarize(preds[i], tau);
        recs.push_back({test[i].id, mean_pixel_loss(preds[i], test[i].image), iou(bin, test[i].image),
                        symmetry_aware_iou(bin, test[i].image)});
    }
    return make_report(std::move(recs), tau);
}

inline EvalReport evaluate_testset(const ModelParams& p, const std::vector<Sample>& test, double tau = 0.5) {
    if (test.empty()) throw EmptySplit("evaluation set is empty");
    return evaluate_predictions(test, predict(p, test), tau);
}

/// IoU between the binarized designs the model proposes for the spectra of
/// `enc` simulated in hosts h1 and h2.
inline double epsilon_consistency(const ModelParams& p, const GeometryEncoding& enc, double h1, double h2,
                                  const SpectrumGrid& grid, double tau = 0.5, const SurrogateConstants& c = {}) {
    auto design = [&](double h) {
        const auto [s1, s2] = simulate_spectra(enc, Material{Metal::Gold, h}, grid, c);
        return binarize(forward(p, s1.values, s2.values, h), tau);
    };
    return iou(design(h1), design(h2));
}

inline std::string report_csv(const EvalReport& rep) {
    std::string out = "id,loss,iou,sym_iou\n";
    for (const auto& r : rep.records)
        out += r.id + "," + format_real(r.loss) + "," + format_real(r.iou) + "," + format_real(r.sym_iou) + "\n";
    return out;
}

inline std::string report_summary(const EvalReport& rep) {
    std::string out;
    out += "samples: " + std::to_string(rep.records.size()) + "\n";
    out += "tau: " + format_real(rep.tau) + "\n";
    auto line = [&](const char* name, const Aggregate& a) {
        out += std::string(name) + " mean: " + format_real(a.mean) + "\n";
        out += std::string(name) + " median: " + format_real(a.median) + "\n";
    };
    line("loss", rep.loss);
    line("iou", rep.iou);
    line("sym_iou", rep.sym_iou);
    return out;
}

}  // namespace invdesign
