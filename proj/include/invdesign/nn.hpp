#pragma once

// Spectra-to-image network.
//
//   s1 ──FC stack──┐
//   s2 ──FC stack──┼─ concat ─ FC ─ reshape d x d ─ conv5x5(1→C) ─ conv5x5(C→C) ─ conv5x5(C→1) ─ ĝ
//   ε  ──FC stack──┘
//
// Every layer is followed by its bias and a ReLU (the last conv optionally
// linear). Convolutions are stride 1 with zero padding 2, so the image stays
// d x d throughout. Gradients are derived by hand for this fixed graph.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conv.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace invdesign {

struct ArchConfig {
    std::vector<int> branch_widths{250, 250};  // same stack for each of the three inputs
    int d = 64;
    int n_points = 200;
    int channels = 10;
    int kernel = 5;
    bool linear_head = false;

    int branch_out() const { return branch_widths.back(); }
    int fusion_in() const { return 3 * branch_out(); }
    int pixels() const { return d * d; }
    bool operator==(const ArchConfig&) const = default;
};

inline void validate(const ArchConfig& a) {
    if (a.branch_widths.empty()) throw ConfigError("at least one fully connected layer per branch is required");
    for (int w : a.branch_widths)
        if (w <= 0) throw ConfigError("branch widths must be positive");
    if (a.d <= 0 || a.n_points <= 0 || a.channels <= 0) throw ConfigError("d, n_points and channels must be positive");
    if (a.kernel != 1 && a.kernel != 3 && a.kernel != 5) throw ConfigError("kernel must be 1, 3 or 5");
}

struct DenseLayer {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]
    bool operator==(const DenseLayer&) const = default;
};

struct ConvLayer {
    Tensor kernel;  // [out, in, k, k]
    Tensor bias;    // [out]
    bool operator==(const ConvLayer&) const = default;
};

/// All learnable weights. Also used for gradients and Adam moments.
struct ModelParams {
    ArchConfig arch;
    std::array<std::vector<DenseLayer>, 3> branches;  // inputs s1, s2, epsilon_host
    DenseLayer fusion;
    std::array<ConvLayer, 3> convs;

    /// Every array in checkpoint order: branch 1..3 layers (weight, bias),
    /// fusion (weight, bias), conv 1..3 (kernel, bias).
    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> out;
        for (auto& br : branches)
            for (auto& l : br) {
                out.push_back(&l.weight);
                out.push_back(&l.bias);
            }
        out.push_back(&fusion.weight);
        out.push_back(&fusion.bias);
        for (auto& c : convs) {
            out.push_back(&c.kernel);
            out.push_back(&c.bias);
        }
        return out;
    }
    std::vector<const Tensor*> tensors() const {
        auto mut = const_cast<ModelParams*>(this)->tensors();
        return {mut.begin(), mut.end()};
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Tensor* t : tensors()) n += t->size();
        return n;
    }

    bool operator==(const ModelParams&) const = default;
};

inline int branch_input_size(const ArchConfig& a, int branch) { return branch < 2 ? a.n_points : 1; }

/// Zero-filled parameters with the shapes implied by `arch`.
inline ModelParams zero_params(const ArchConfig& arch) {
    validate(arch);
    ModelParams p;
    p.arch = arch;
    for (int b = 0; b < 3; ++b) {
        int in = branch_input_size(arch, b);
        for (int w : arch.branch_widths) {
            p.branches[b].push_back({Tensor({w, in}), Tensor({w})});
            in = w;
        }
    }
    p.fusion = {Tensor({arch.pixels(), arch.fusion_in()}), Tensor({arch.pixels()})};
    const int k = arch.kernel, c = arch.channels;
    p.convs[0] = {Tensor({c, 1, k, k}), Tensor({c})};
    p.convs[1] = {Tensor({c, c, k, k}), Tensor({c})};
    p.convs[2] = {Tensor({1, c, k, k}), Tensor({1})};
    return p;
}

inline void check_same_shapes(const ModelParams& a, const ModelParams& b) {
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    if (ta.size() != tb.size()) throw ShapeMismatch("parameter sets have different layer counts");
    for (std::size_t i = 0; i < ta.size(); ++i)
        if (!ta[i]->same_shape(*tb[i]))
            throw ShapeMismatch("parameter " + std::to_string(i) + " shape " + shape_string(ta[i]->shape) +
                                " vs " + shape_string(tb[i]->shape));
}

/// He initialisation: weights ~ N(0, 2 / fan_in), biases 0. The draw order
/// follows ModelParams::tensors().
inline ModelParams init_params(const ArchConfig& arch, std::uint64_t seed) {
    ModelParams p = zero_params(arch);
    Rng rng(seed);
    for (Tensor* t : p.tensors()) {
        if (t->shape.size() == 1) continue;  // bias
        std::size_t fan_in = 1;
        for (std::size_t i = 1; i < t->shape.size(); ++i) fan_in *= std::size_t(t->shape[i]);
        const double sd = std::sqrt(2.0 / double(fan_in));
        for (double& w : t->data) w = sd * standard_normal(rng);
    }
    return p;
}

/// Generated image, d x d, row-major.
struct PixelGrid {
    int d = 0;
    std::vector<double> values;

    PixelGrid() = default;
    explicit PixelGrid(int d_) : d(d_), values(std::size_t(d_) * d_, 0.0) {}
    double operator()(int r, int c) const { return values[std::size_t(r) * d + c]; }
};

/// One network query; `target` is only read by backward().
struct Example {
    std::span<const double> s1;
    std::span<const double> s2;
    double epsilon_host = 1.0;
    std::span<const std::uint8_t> target;
};

/// Squared L2 distance summed over all pixels.
inline double loss(const PixelGrid& g_hat, const BinaryImage& g) {
    if (g_hat.d != g.size()) throw ShapeMismatch("loss: image sizes differ");
    const auto px = g.pixels();
    double s = 0.0;
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double r = g_hat.values[i] - double(px[i]);
        s += r * r;
    }
    return s;
}

inline double mean_pixel_loss(const PixelGrid& g_hat, const BinaryImage& g) {
    return loss(g_hat, g) / double(std::size_t(g.size()) * g.size());
}

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMatrix> as_matrix(const Tensor& w) {
    return {w.data.data(), w.shape[0], w.shape[1]};
}
inline Eigen::Map<RowMatrix> as_matrix(Tensor& w) { return {w.data.data(), w.shape[0], w.shape[1]}; }
inline Eigen::Map<const Eigen::VectorXd> as_vector(const Tensor& b) {
    return {b.data.data(), Eigen::Index(b.size())};
}
inline Eigen::Map<Eigen::VectorXd> as_vector(Tensor& b) { return {b.data.data(), Eigen::Index(b.size())}; }

inline void relu_inplace(std::span<double> v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
}

// grad *= [activation > 0]; ReLU subgradient at 0 is 0.
inline void relu_mask(std::span<double> grad, std::span<const double> activation) {
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(activation[i] > 0.0)) grad[i] = 0.0;
}

}  // namespace detail

/// Intermediate activations of a batch (columns are samples). Reused across
/// calls to avoid re-allocating the conv buffers every step.
struct ForwardCache {
    int batch = 0;
    std::array<std::vector<Eigen::MatrixXd>, 3> branch_inputs_and_outputs;  // [0] = input, [l+1] = layer l output
    Eigen::MatrixXd fused_in;   // fusion_in x B
    Eigen::MatrixXd fused_out;  // d*d x B, post-ReLU
    std::vector<double> conv1, conv2, out;  // B x C x d x d, B x C x d x d, B x d x d

    std::span<const double> sample(const std::vector<double>& buf, int s, std::size_t per) const {
        return {buf.data() + std::size_t(s) * per, per};
    }
};

inline void check_example(const ArchConfig& arch, const Example& ex, bool need_target) {
    if (ex.s1.size() != std::size_t(arch.n_points) || ex.s2.size() != std::size_t(arch.n_points))
        throw ShapeMismatch("spectrum length " + std::to_string(ex.s1.size()) + "/" + std::to_string(ex.s2.size()) +
                            " does not match n_points " + std::to_string(arch.n_points));
    if (need_target && ex.target.size() != std::size_t(arch.pixels()))
        throw ShapeMismatch("target image does not match d x d");
}

/// Batched forward pass, filling `cache`.
inline void forward_batch(const ModelParams& p, std::span<const Example> batch, ForwardCache& cache) {
    const ArchConfig& a = p.arch;
    const int B = int(batch.size());
    const int C = a.channels;
    const std::size_t plane = std::size_t(a.pixels());
    cache.batch = B;

    for (int br = 0; br < 3; ++br) {
        auto& acts = cache.branch_inputs_and_outputs[br];
        acts.resize(p.branches[br].size() + 1);
        Eigen::MatrixXd& x = acts[0];
        x.resize(branch_input_size(a, br), B);
        for (int s = 0; s < B; ++s) {
            check_example(a, batch[s], false);
            if (br == 2) {
                x(0, s) = batch[s].epsilon_host;
            } else {
                const auto src = br == 0 ? batch[s].s1 : batch[s].s2;
                for (int i = 0; i < a.n_points; ++i) x(i, s) = src[i];
            }
        }
        for (std::size_t l = 0; l < p.branches[br].size(); ++l) {
            const auto& layer = p.branches[br][l];
            Eigen::MatrixXd& y = acts[l + 1];
            y.noalias() = detail::as_matrix(layer.weight) * acts[l];
            y.colwise() += detail::as_vector(layer.bias);
            detail::relu_inplace({y.data(), std::size_t(y.size())});
        }
    }
    const int w = a.branch_out();
    cache.fused_in.resize(a.fusion_in(), B);
    for (int br = 0; br < 3; ++br) cache.fused_in.middleRows(br * w, w) = cache.branch_inputs_and_outputs[br].back();

    cache.fused_out.noalias() = detail::as_matrix(p.fusion.weight) * cache.fused_in;
    cache.fused_out.colwise() += detail::as_vector(p.fusion.bias);
    detail::relu_inplace({cache.fused_out.data(), std::size_t(cache.fused_out.size())});

    cache.conv1.resize(std::size_t(B) * C * plane);
    cache.conv2.resize(std::size_t(B) * C * plane);
    cache.out.resize(std::size_t(B) * plane);
    const ConvDims d1{1, C, a.d, a.kernel}, d2{C, C, a.d, a.kernel}, d3{C, 1, a.d, a.kernel};
    for (int s = 0; s < B; ++s) {
        std::span<double> c1(cache.conv1.data() + std::size_t(s) * C * plane, C * plane);
        std::span<double> c2(cache.conv2.data() + std::size_t(s) * C * plane, C * plane);
        std::span<double> o(cache.out.data() + std::size_t(s) * plane, plane);
        conv2d_same(d1, {cache.fused_out.col(s).data(), plane}, p.convs[0].kernel.span(), p.convs[0].bias.span(), c1);
        detail::relu_inplace(c1);
        conv2d_same(d2, c1, p.convs[1].kernel.span(), p.convs[1].bias.span(), c2);
        detail::relu_inplace(c2);
        conv2d_same(d3, c2, p.convs[2].kernel.span(), p.convs[2].bias.span(), o);
        if (!a.linear_head) detail::relu_inplace(o);
    }
}

inline PixelGrid forward(const ModelParams& p, const Example& ex) {
    ForwardCache cache;
    forward_batch(p, std::span<const Example>(&ex, 1), cache);
    PixelGrid g(p.arch.d);
    std::copy(cache.out.begin(), cache.out.end(), g.values.begin());
    return g;
}

inline PixelGrid forward(const ModelParams& p, std::span<const double> s1, std::span<const double> s2,
                         double epsilon_host) {
    return forward(p, Example{s1, s2, epsilon_host, {}});
}

/// Per-ReLU on/off pattern for one sample, in layer order. Two parameter
/// settings with equal patterns lie on the same linear piece of the network.
inline std::vector<bool> activation_pattern(const ModelParams& p, const Example& ex) {
    ForwardCache cache;
    forward_batch(p, std::span<const Example>(&ex, 1), cache);
    std::vector<bool> out;
    auto add = [&](const double* v, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) out.push_back(v[i] > 0.0);
    };
    for (const auto& acts : cache.branch_inputs_and_outputs)
        for (std::size_t l = 1; l < acts.size(); ++l) add(acts[l].data(), std::size_t(acts[l].size()));
    add(cache.fused_out.data(), std::size_t(cache.fused_out.size()));
    add(cache.conv1.data(), cache.conv1.size());
    add(cache.conv2.data(), cache.conv2.size());
    if (!p.arch.linear_head) add(cache.out.data(), cache.out.size());
    return out;
}

/// Mean over the batch of the summed squared pixel error.
inline double batch_loss(const ModelParams& p, std::span<const Example> batch) {
    if (batch.empty()) throw ShapeMismatch("empty batch");
    ForwardCache cache;
    forward_batch(p, batch, cache);
    const std::size_t plane = std::size_t(p.arch.pixels());
    double total = 0.0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        check_example(p.arch, batch[s], true);
        double ls = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double r = cache.out[s * plane + i] - double(batch[s].target[i]);
            ls += r * r;
        }
        total += ls;
    }
    return total / double(batch.size());
}

struct BackwardResult {
    ModelParams grads;
    double loss = 0.0;  // batch mean of per-sample summed squared error
};

/// Scratch memory for backward(); keep one alive across training steps.
struct Workspace {
    ForwardCache cache;
    std::vector<double> g_out, g_conv2, g_conv1, g_fused_col, tmp_kernel, tmp_bias;
    Eigen::MatrixXd g_fused, g_concat, g_act, g_prev;
};

/// Exact gradients of the batch-mean loss w.r.t. every parameter. `grads`
/// must already have the shapes of `p`; it is overwritten. Per-sample conv
/// terms are reduced in batch order.
inline double backward_into(const ModelParams& p, std::span<const Example> batch, ModelParams& grads,
                            Workspace& ws) {
    if (batch.empty()) throw ShapeMismatch("backward: empty batch");
    const ArchConfig& a = p.arch;
    const int B = int(batch.size());
    const int C = a.channels;
    const std::size_t plane = std::size_t(a.pixels());
    for (const auto& ex : batch) check_example(a, ex, true);

    forward_batch(p, batch, ws.cache);
    auto& cache = ws.cache;

    for (Tensor* t : grads.tensors()) t->fill(0.0);

    const ConvDims d1{1, C, a.d, a.kernel}, d2{C, C, a.d, a.kernel}, d3{C, 1, a.d, a.kernel};
    ws.g_out.resize(plane);
    ws.g_conv2.resize(C * plane);
    ws.g_conv1.resize(C * plane);
    ws.g_fused.resize(Eigen::Index(plane), B);
    ws.tmp_kernel.resize(std::size_t(C) * C * a.kernel * a.kernel);
    ws.tmp_bias.resize(std::size_t(C));

    auto accumulate = [](Tensor& dst, std::span<const double> src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src[i];
    };

    const double scale = 2.0 / double(B);
    double total = 0.0;
    for (int s = 0; s < B; ++s) {
        const std::span<const double> out = cache.sample(cache.out, s, plane);
        const std::span<const double> c2 = cache.sample(cache.conv2, s, C * plane);
        const std::span<const double> c1 = cache.sample(cache.conv1, s, C * plane);
        const std::span<const double> f{cache.fused_out.col(s).data(), plane};

        double ls = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double r = out[i] - double(batch[s].target[i]);
            ls += r * r;
            ws.g_out[i] = scale * r;
        }
        total += ls;
        if (!a.linear_head) detail::relu_mask(ws.g_out, out);

        // conv3
        std::span<double> gk3(ws.tmp_kernel.data(), d3.kernel_size());
        std::span<double> gb3(ws.tmp_bias.data(), 1);
        conv2d_same_backward_kernel(d3, c2, ws.g_out, gk3, gb3);
        accumulate(grads.convs[2].kernel, gk3);
        accumulate(grads.convs[2].bias, gb3);
        conv2d_same_backward_input(d3, ws.g_out, p.convs[2].kernel.span(), ws.g_conv2);
        detail::relu_mask(ws.g_conv2, c2);

        // conv2
        std::span<double> gk2(ws.tmp_kernel.data(), d2.kernel_size());
        std::span<double> gb2(ws.tmp_bias.data(), std::size_t(C));
        conv2d_same_backward_kernel(d2, c1, ws.g_conv2, gk2, gb2);
        accumulate(grads.convs[1].kernel, gk2);
        accumulate(grads.convs[1].bias, gb2);
        conv2d_same_backward_input(d2, ws.g_conv2, p.convs[1].kernel.span(), ws.g_conv1);
        detail::relu_mask(ws.g_conv1, c1);

        // conv1
        std::span<double> gk1(ws.tmp_kernel.data(), d1.kernel_size());
        std::span<double> gb1(ws.tmp_bias.data(), std::size_t(C));
        conv2d_same_backward_kernel(d1, f, ws.g_conv1, gk1, gb1);
        accumulate(grads.convs[0].kernel, gk1);
        accumulate(grads.convs[0].bias, gb1);
        std::span<double> gf{ws.g_fused.col(s).data(), plane};
        conv2d_same_backward_input(d1, ws.g_conv1, p.convs[0].kernel.span(), gf);
        detail::relu_mask(gf, f);
    }

    // fusion layer
    detail::as_matrix(grads.fusion.weight).noalias() = ws.g_fused * cache.fused_in.transpose();
    detail::as_vector(grads.fusion.bias) = ws.g_fused.rowwise().sum();
    ws.g_concat.noalias() = detail::as_matrix(p.fusion.weight).transpose() * ws.g_fused;

    const int w = a.branch_out();
    for (int br = 0; br < 3; ++br) {
        const auto& acts = cache.branch_inputs_and_outputs[br];
        ws.g_act = ws.g_concat.middleRows(br * w, w);
        for (std::size_t l = p.branches[br].size(); l-- > 0;) {
            detail::relu_mask({ws.g_act.data(), std::size_t(ws.g_act.size())},
                              {acts[l + 1].data(), std::size_t(acts[l + 1].size())});
            auto& gl = grads.branches[br][l];
            detail::as_matrix(gl.weight).noalias() = ws.g_act * acts[l].transpose();
            detail::as_vector(gl.bias) = ws.g_act.rowwise().sum();
            if (l > 0) {
                ws.g_prev.noalias() = detail::as_matrix(p.branches[br][l].weight).transpose() * ws.g_act;
                ws.g_act.swap(ws.g_prev);
            }
        }
    }
    return total / double(B);
}

inline BackwardResult backward(const ModelParams& p, std::span<const Example> batch) {
    BackwardResult res{zero_params(p.arch), 0.0};
    Workspace ws;
    res.loss = backward_into(p, batch, res.grads, ws);
    return res;
}

struct AdamConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    ModelParams m;
    ModelParams v;
    std::int64_t t = 0;
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamState&) const = default;
};

inline AdamState make_adam_state(const ArchConfig& arch, const AdamConfig& cfg = {}) {
    return {zero_params(arch), zero_params(arch), 0, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};
}

/// One bias-corrected Adam update of `p` in place; increments state.t by 1.
inline void adam_step(ModelParams& p, const ModelParams& grads, AdamState& state) {
    check_same_shapes(p, grads);
    check_same_shapes(p, state.m);
    check_same_shapes(p, state.v);
    if (state.t < 0) throw ConfigError("adam step counter must be non-negative");
    state.t += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, double(state.t));
    const double c2 = 1.0 - std::pow(b2, double(state.t));
    const double step = state.lr / c1;
    const double inv_c2 = 1.0 / c2;
    const double eps = state.eps;
    auto tp = p.tensors();
    const auto tg = grads.tensors();
    auto tm = state.m.tensors();
    auto tv = state.v.tensors();
    for (std::size_t k = 0; k < tp.size(); ++k) {
        double* __restrict w = tp[k]->data.data();
        const double* __restrict g = tg[k]->data.data();
        double* __restrict m = tm[k]->data.data();
        double* __restrict v = tv[k]->data.data();
        const std::size_t n = tp[k]->size();
        for (std::size_t i = 0; i < n; ++i) {
            const double mi = b1 * m[i] + (1.0 - b1) * g[i];
            const double vi = b2 * v[i] + (1.0 - b2) * (g[i] * g[i]);
            m[i] = mi;
            v[i] = vi;
            w[i] -= step * mi / (std::sqrt(vi * inv_c2) + eps);
        }
    }
}

}  // namespace invdesign
