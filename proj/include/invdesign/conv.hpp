#pragma once

// Stride-1, zero "same" padding 2D cross-correlation and its two gradients,
// for odd kernels up to 5.
//
// Layouts (row-major): input [in_ch][d][d], kernel [out_ch][in_ch][k][k],
// bias [out_ch], output [out_ch][d][d]. k is odd and pad = k / 2.
//
// Every output element is a single std::fma chain started from 0 in a fixed
// term order, with padding positions contributing fma(w, 0, acc):
//   forward      out[o][y][x]  terms (i, ky, kx), then + bias[o]
//   input grad   gin[i][y][x]  terms (o, ky, kx) of the flipped kernel
//                              K[o][i][k-1-ky][k-1-kx] * g[o][y+ky-p][x+kx-p]
//   kernel grad  gk[o][i][ky][kx] terms g[o][y][x] * in[i][y+ky-p][x+kx-p] split
//                into 8 chains by x mod 8, each in (y, x) order; the chains are
//                then added left to right: ((c0 + c1) + c2) + ... + c7
// The loops below vectorize across independent chains only, so the results
// are bit-identical to a naive scalar loop in that order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "simd.hpp"

namespace invdesign {

struct ConvDims {
    int in_ch = 1;
    int out_ch = 1;
    int d = 1;
    int k = 5;

    int pad() const { return k / 2; }
    std::size_t input_size() const { return std::size_t(in_ch) * d * d; }
    std::size_t output_size() const { return std::size_t(out_ch) * d * d; }
    std::size_t kernel_size() const { return std::size_t(out_ch) * in_ch * k * k; }
};

namespace detail {

inline constexpr int kLanes = 8;
inline constexpr int kMaxRowBlock = 64;

inline int round_up(int n, int m) { return (n + m - 1) / m * m; }

// Compile-time unrolled loop: f(std::integral_constant<int, I>{}) for I in [0, N).
// Constant indices let the compiler keep accumulator arrays in registers.
template <int N, class F>
inline __attribute__((always_inline)) void static_for(F&& f) {
    [&]<int... I>(std::integer_sequence<int, I...>) {
        (f(std::integral_constant<int, I>{}), ...);
    }(std::make_integer_sequence<int, N>{});
}

/// Zero-padded copy of `channels` planes of d x d, with `pad` rows/cols of
/// zeros on each side and extra zero columns on the right so that vector
/// loads may overrun the last valid column.
struct PaddedPlanes {
    int channels = 0, d = 0, pad = 0, stride = 0, rows = 0;
    std::vector<double> buf;

    void assign(std::span<const double> planes, int channels_, int d_, int pad_, int extra_cols) {
        channels = channels_;
        d = d_;
        pad = pad_;
        rows = d + 2 * pad;
        stride = round_up(d + 2 * pad + extra_cols, kLanes);
        buf.assign(std::size_t(channels) * rows * stride, 0.0);
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < d; ++y)
                std::copy_n(planes.data() + (std::size_t(c) * d + y) * d, d, row(c, y + pad) + pad);
    }

    double* row(int c, int r) { return buf.data() + (std::size_t(c) * rows + r) * stride; }
    const double* row(int c, int r) const { return buf.data() + (std::size_t(c) * rows + r) * stride; }
};

inline void check(const ConvDims& dims) {
    if (dims.in_ch <= 0 || dims.out_ch <= 0 || dims.d <= 0) throw ShapeMismatch("conv dimensions must be positive");
    if (dims.k != 1 && dims.k != 3 && dims.k != 5) throw ShapeMismatch("conv kernel must be 1, 3 or 5");
}

// Shared by the forward pass and the input gradient. `src` is padded and
// `taps(o, i)` points at the K*K weights combining source channel i into
// destination channel o, in application order. OCB destination channels x
// NV*8 columns are accumulated in registers.
template <int K, int OCB, int NV, int RB, class Taps>
__attribute__((flatten)) void correlate_block(const PaddedPlanes& src, int src_ch, int d, int o0, Taps&& taps, std::span<double> dst,
                     std::span<const double> bias) {
    // RB output rows share the loads of the K + RB - 1 input rows they touch;
    // each output still sees its terms in (ic, ky, kx) order.
    using simd::Vec8;
    constexpr int kBlock = 8 * NV;
    alignas(64) double tmp[kBlock];
    for (int y0 = 0; y0 < d; y0 += RB) {
        const int rows_here = std::min(RB, d - y0);
        for (int x0 = 0; x0 < d; x0 += kBlock) {
            Vec8 acc[RB][OCB][NV];
            static_for<RB>([&](auto r) {
                static_for<OCB>([&](auto b) { static_for<NV>([&](auto v) { acc[r][b][v] = Vec8::zero(); }); });
            });
            for (int ic = 0; ic < src_ch; ++ic) {
                const double* w[OCB];
                static_for<OCB>([&](auto b) { w[b] = taps(o0 + b, ic); });
                static_for<K + RB - 1>([&](auto sr) {
                    const double* row = src.row(ic, std::min(y0 + int(sr), src.rows - 1)) + x0;
                    static_for<K>([&](auto kx) {
                        Vec8 in[NV];
                        static_for<NV>([&](auto v) { in[v] = Vec8::load(row + kx + 8 * v); });
                        static_for<RB>([&](auto r) {
                            constexpr int ky = int(sr) - int(r);
                            if constexpr (ky >= 0 && ky < K) {
                                static_for<OCB>([&](auto b) {
                                    const Vec8 wv = Vec8::broadcast(w[b][ky * K + kx]);
                                    static_for<NV>([&](auto v) { acc[r][b][v] = simd::fma(wv, in[v], acc[r][b][v]); });
                                });
                            }
                        });
                    });
                });
            }
            const int n = std::min(kBlock, d - x0);
            static_for<RB>([&](auto r) {
                if (int(r) >= rows_here) return;
                static_for<OCB>([&](auto b) {
                    static_for<NV>([&](auto v) { acc[r][b][v].store(tmp + 8 * v); });
                    double* out = dst.data() + (std::size_t(o0 + b) * d + y0 + r) * d + x0;
                    if (bias.empty()) {
                        std::copy_n(tmp, n, out);
                    } else {
                        const double bv = bias[std::size_t(o0 + b)];
                        for (int i = 0; i < n; ++i) out[i] = tmp[i] + bv;
                    }
                });
            });
        }
    }
}

template <int K, class Taps>
void correlate_k(const PaddedPlanes& src, int src_ch, int dst_ch, int d, Taps&& taps, std::span<double> dst,
                 std::span<const double> bias) {
    int o = 0;
    if (d > 32) {
        for (; o + 5 <= dst_ch; o += 5) correlate_block<K, 5, 4, 1>(src, src_ch, d, o, taps, dst, bias);
        for (; o + 2 <= dst_ch; o += 2) correlate_block<K, 2, 4, 1>(src, src_ch, d, o, taps, dst, bias);
        for (; o < dst_ch; ++o) correlate_block<K, 1, 8, 2>(src, src_ch, d, o, taps, dst, bias);
    } else {
        for (; o + 2 <= dst_ch; o += 2) correlate_block<K, 2, 1, 1>(src, src_ch, d, o, taps, dst, bias);
        for (; o < dst_ch; ++o) correlate_block<K, 1, 1, 1>(src, src_ch, d, o, taps, dst, bias);
    }
}

template <class Taps>
void correlate(const PaddedPlanes& src, int src_ch, int dst_ch, int d, int k, Taps&& taps,
               std::span<double> dst, std::span<const double> bias) {
    switch (k) {
        case 1: return correlate_k<1>(src, src_ch, dst_ch, d, taps, dst, bias);
        case 3: return correlate_k<3>(src, src_ch, dst_ch, d, taps, dst, bias);
        case 5: return correlate_k<5>(src, src_ch, dst_ch, d, taps, dst, bias);
        default: throw ShapeMismatch("unsupported conv kernel size");
    }
}

// Kernel gradient for OCB output channels starting at o0, input channel ic
// and KYB kernel rows starting at ky0. Vector lanes are the x mod 8 chains;
// `g` holds grad_out with rows zero-extended to a multiple of 8.
template <int K, int OCB, int KYB>
__attribute__((flatten)) void kernel_grad_block(const PaddedPlanes& in, const PaddedPlanes& g, const ConvDims& dims,
                                                int o0, int ic, int ky0, std::span<double> grad_kernel) {
    using simd::Vec8;
    const int d = dims.d;
    Vec8 acc[OCB][KYB][K];
    static_for<OCB>([&](auto b) {
        static_for<KYB>([&](auto j) { static_for<K>([&](auto kx) { acc[b][j][kx] = Vec8::zero(); }); });
    });
    for (int y = 0; y < d; ++y) {
        const double* rows[KYB];
        static_for<KYB>([&](auto j) { rows[j] = in.row(ic, y + ky0 + j); });
        const double* gr[OCB];
        static_for<OCB>([&](auto b) { gr[b] = g.row(o0 + b, y); });
        for (int x0 = 0; x0 < d; x0 += kLanes) {
            Vec8 gv[OCB];
            static_for<OCB>([&](auto b) { gv[b] = Vec8::load(gr[b] + x0); });
            static_for<KYB>([&](auto j) {
                static_for<K>([&](auto kx) {
                    const Vec8 win = Vec8::load(rows[j] + x0 + kx);
                    static_for<OCB>([&](auto b) { acc[b][j][kx] = simd::fma(gv[b], win, acc[b][j][kx]); });
                });
            });
        }
    }
    alignas(64) double lanes[kLanes];
    static_for<OCB>([&](auto b) {
        static_for<KYB>([&](auto j) {
            static_for<K>([&](auto kx) {
                acc[b][j][kx].store(lanes);
                double sum = lanes[0];
                for (int l = 1; l < kLanes; ++l) sum += lanes[l];
                grad_kernel[((std::size_t(o0 + b) * dims.in_ch + ic) * K + ky0 + j) * K + kx] = sum;
            });
        });
    });
}

template <int K>
void kernel_grad_k(const PaddedPlanes& in, const PaddedPlanes& g, const ConvDims& dims,
                   std::span<double> grad_kernel) {
    // About 25 accumulators: five output channels per kernel row, or all K
    // kernel rows of a single output channel.
    constexpr int kWide = 5;
    for (int ic = 0; ic < dims.in_ch; ++ic) {
        int o = 0;
        for (; o + kWide <= dims.out_ch; o += kWide)
            for (int ky = 0; ky < K; ++ky) kernel_grad_block<K, kWide, 1>(in, g, dims, o, ic, ky, grad_kernel);
        for (; o + 2 <= dims.out_ch; o += 2)
            for (int ky = 0; ky < K; ++ky) kernel_grad_block<K, 2, 1>(in, g, dims, o, ic, ky, grad_kernel);
        for (; o < dims.out_ch; ++o) kernel_grad_block<K, 1, K>(in, g, dims, o, ic, 0, grad_kernel);
    }
}

inline thread_local PaddedPlanes tls_pad;
inline thread_local PaddedPlanes tls_grad;

}  // namespace detail

/// out = correlate(input, kernel) + bias (no activation).
inline void conv2d_same(const ConvDims& dims, std::span<const double> input, std::span<const double> kernel,
                        std::span<const double> bias, std::span<double> out) {
    detail::check(dims);
    if (input.size() != dims.input_size() || kernel.size() != dims.kernel_size() ||
        bias.size() != std::size_t(dims.out_ch) || out.size() != dims.output_size())
        throw ShapeMismatch("conv2d_same: buffer sizes do not match dims");
    const int k = dims.k;
    auto& pad = detail::tls_pad;
    pad.assign(input, dims.in_ch, dims.d, dims.pad(), detail::round_up(dims.d, detail::kMaxRowBlock) - dims.d);
    auto taps = [&](int o, int i) { return kernel.data() + (std::size_t(o) * dims.in_ch + i) * k * k; };
    detail::correlate(pad, dims.in_ch, dims.out_ch, dims.d, k, taps, out, bias);
}

/// Gradient of the loss w.r.t. the conv input given the gradient w.r.t. its
/// (pre-activation) output.
inline void conv2d_same_backward_input(const ConvDims& dims, std::span<const double> grad_out,
                                       std::span<const double> kernel, std::span<double> grad_in) {
    detail::check(dims);
    if (grad_out.size() != dims.output_size() || kernel.size() != dims.kernel_size() ||
        grad_in.size() != dims.input_size())
        throw ShapeMismatch("conv2d_same_backward_input: buffer sizes do not match dims");
    const int k = dims.k;
    const std::size_t kk = std::size_t(k) * k;
    // flipped[i][o] = kernel[o][i] rotated by 180 degrees
    std::vector<double> flipped(dims.kernel_size());
    for (int o = 0; o < dims.out_ch; ++o)
        for (int i = 0; i < dims.in_ch; ++i) {
            const double* src = kernel.data() + (std::size_t(o) * dims.in_ch + i) * kk;
            double* dst = flipped.data() + (std::size_t(i) * dims.out_ch + o) * kk;
            for (std::size_t t = 0; t < kk; ++t) dst[t] = src[kk - 1 - t];
        }
    auto& pad = detail::tls_pad;
    pad.assign(grad_out, dims.out_ch, dims.d, dims.pad(), detail::round_up(dims.d, detail::kMaxRowBlock) - dims.d);
    auto taps = [&](int i, int o) { return flipped.data() + (std::size_t(i) * dims.out_ch + o) * kk; };
    detail::correlate(pad, dims.out_ch, dims.in_ch, dims.d, k, taps, grad_in, {});
}

/// Kernel and bias gradients for one sample (overwrites the outputs).
inline void conv2d_same_backward_kernel(const ConvDims& dims, std::span<const double> input,
                                        std::span<const double> grad_out, std::span<double> grad_kernel,
                                        std::span<double> grad_bias) {
    detail::check(dims);
    if (input.size() != dims.input_size() || grad_out.size() != dims.output_size() ||
        grad_kernel.size() != dims.kernel_size() || grad_bias.size() != std::size_t(dims.out_ch))
        throw ShapeMismatch("conv2d_same_backward_kernel: buffer sizes do not match dims");
    const int k = dims.k, d = dims.d;
    const int tail = detail::round_up(d, detail::kLanes) - d;
    auto& pad = detail::tls_pad;
    pad.assign(input, dims.in_ch, d, dims.pad(), tail + detail::kLanes);
    auto& g = detail::tls_grad;
    g.assign(grad_out, dims.out_ch, d, 0, tail);

    switch (k) {
        case 1: detail::kernel_grad_k<1>(pad, g, dims, grad_kernel); break;
        case 3: detail::kernel_grad_k<3>(pad, g, dims, grad_kernel); break;
        case 5: detail::kernel_grad_k<5>(pad, g, dims, grad_kernel); break;
        default: throw ShapeMismatch("unsupported conv kernel size");
    }
    for (int o = 0; o < dims.out_ch; ++o) {
        double s = 0.0;
        const double* g = grad_out.data() + std::size_t(o) * d * d;
        for (int t = 0; t < d * d; ++t) s += g[t];
        grad_bias[std::size_t(o)] = s;
    }
}

}  // namespace invdesign
