#include <gtest/gtest.h>

#include <filesystem>

#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace invdesign;

namespace {

ArchConfig micro_arch() {
    ArchConfig a;
    a.d = 8;
    a.n_points = 16;
    a.branch_widths = {12, 9};
    return a;
}

std::vector<double> random_spectrum(Rng& rng, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = uniform01(rng);
    return v;
}

BinaryImage random_image(Rng& rng, int d, double p = 0.3) {
    BinaryImage img(d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) img.set(r, c, uniform01(rng) < p);
    return img;
}

}  // namespace

TEST(Init, DeterministicWithZeroBiases) {
    const auto a = micro_arch();
    const auto p = init_params(a, 42);
    EXPECT_EQ(p, init_params(a, 42));
    EXPECT_FALSE(p == init_params(a, 43));
    for (const Tensor* t : p.tensors())
        if (t->shape.size() == 1) {
            for (double b : t->data) EXPECT_EQ(b, 0.0);
        }
}

TEST(Init, HeVariance) {
    ArchConfig a;
    a.d = 8;
    a.n_points = 100;
    a.branch_widths = {200};
    const auto p = init_params(a, 5);
    const auto& w = p.branches[0][0].weight;  // fan_in 100, 20000 draws
    double mean = 0.0, sq = 0.0;
    for (double x : w.data) mean += x;
    mean /= double(w.size());
    for (double x : w.data) sq += (x - mean) * (x - mean);
    const double var = sq / double(w.size() - 1);
    EXPECT_NEAR(var, 0.02, 0.2 * 0.02);
    EXPECT_NEAR(mean, 0.0, 0.005);
    // Conv fan_in is in_ch * k * k.
    const auto& k2 = p.convs[1].kernel.data;
    double s2 = 0.0;
    for (double x : k2) s2 += x * x;
    EXPECT_NEAR(s2 / double(k2.size()), 2.0 / 250.0, 0.25 * 2.0 / 250.0);
}

TEST(Shapes, ChainCorrectly) {
    ArchConfig a;
    const auto p = zero_params(a);
    EXPECT_EQ(p.branches[0][0].weight.shape, (std::vector<int>{250, 200}));
    EXPECT_EQ(p.branches[2][0].weight.shape, (std::vector<int>{250, 1}));
    EXPECT_EQ(p.branches[1][1].weight.shape, (std::vector<int>{250, 250}));
    EXPECT_EQ(p.fusion.weight.shape, (std::vector<int>{4096, 750}));
    EXPECT_EQ(p.convs[0].kernel.shape, (std::vector<int>{10, 1, 5, 5}));
    EXPECT_EQ(p.convs[1].kernel.shape, (std::vector<int>{10, 10, 5, 5}));
    EXPECT_EQ(p.convs[2].kernel.shape, (std::vector<int>{1, 10, 5, 5}));
    EXPECT_EQ(p.tensors().size(), 2u * (3 * 2 + 1 + 3));

    ArchConfig bad;
    bad.branch_widths = {0};
    EXPECT_THROW(zero_params(bad), ConfigError);
    bad = {};
    bad.kernel = 4;
    EXPECT_THROW(zero_params(bad), ConfigError);
}

TEST(Forward, ZeroParamsGiveZeroOutput) {
    Rng rng(1);
    const auto a = micro_arch();
    const auto s1 = random_spectrum(rng, 16), s2 = random_spectrum(rng, 16);
    const auto g = forward(zero_params(a), s1, s2, 2.0);
    ASSERT_EQ(g.d, 8);
    for (double v : g.values) EXPECT_EQ(v, 0.0);
}

TEST(Forward, HandComputedMicroNetwork) {
    // d = 2, kernel 1, one channel, 1-wide branches. Worked by hand:
    //   branch outputs: relu(1*s1[0] + 1*s1[1]) = 0.5, relu(s2[0] - s2[1]) = 0.2, relu(eps) = 2
    //   fusion rows: [1,0,0], [0,1,0], [0,0,1], [1,1,-1] -> 0.5, 0.2, 2, relu(-1.3) = 0
    //   conv1 x2 + 0.1 -> 1.1, 0.5, 4.1, 0.1; conv2 x1 - 0.5 -> 0.6, 0, 3.6, 0
    //   conv3 x0.5 + 0 -> 0.3, 0, 1.8, 0
    ArchConfig a;
    a.d = 2;
    a.n_points = 2;
    a.branch_widths = {1};
    a.channels = 1;
    a.kernel = 1;
    auto p = zero_params(a);
    p.branches[0][0].weight.data = {1, 1};
    p.branches[1][0].weight.data = {1, -1};
    p.branches[2][0].weight.data = {1};
    p.fusion.weight.data = {1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, -1};
    p.convs[0].kernel.data = {2};
    p.convs[0].bias.data = {0.1};
    p.convs[1].kernel.data = {1};
    p.convs[1].bias.data = {-0.5};
    p.convs[2].kernel.data = {0.5};
    const std::vector<double> s1{0.25, 0.25}, s2{0.7, 0.5};
    const auto g = forward(p, s1, s2, 2.0);
    const std::vector<double> expected{0.3, 0.0, 1.8, 0.0};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g.values[i], expected[i], 1e-15) << i;
    const auto ref = oracle::forward(p, s1, s2, 2.0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(ref[i], expected[i], 1e-15) << i;
}

TEST(Forward, MatchesScalarOracleAndIsNonNegative) {
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        auto cfg = gradcheck::random_config(100 + std::uint64_t(trial));
        const auto& b = cfg.batch;
        const auto g = forward(cfg.params, b.s1[0], b.s2[0], b.eps[0]);
        const auto ref = oracle::forward(cfg.params, b.s1[0], b.s2[0], b.eps[0]);
        ASSERT_EQ(g.values.size(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            EXPECT_NEAR(g.values[i], ref[i], 1e-10 * (1.0 + std::abs(ref[i])));
            if (!cfg.params.arch.linear_head) {
                EXPECT_GE(g.values[i], 0.0);
            }
        }
    }
}

TEST(Forward, FullSizeOutputShapeAndNonNegativity) {
    Rng rng(3);
    const ArchConfig a;
    const auto p = init_params(a, 1);
    const auto s1 = random_spectrum(rng, 200), s2 = random_spectrum(rng, 200);
    const auto g = forward(p, s1, s2, 1.5);
    EXPECT_EQ(g.d, 64);
    EXPECT_EQ(g.values.size(), 4096u);
    for (double v : g.values) EXPECT_GE(v, 0.0);
}

TEST(Forward, BatchEqualsSingle) {
    std::uint64_t seed = 7;
    auto cfg = gradcheck::random_config(seed);
    while (cfg.batch.eps.size() < 2) cfg = gradcheck::random_config(++seed);
    const auto ex = cfg.batch.examples();
    ForwardCache cache;
    forward_batch(cfg.params, ex, cache);
    const std::size_t plane = 64;
    for (std::size_t s = 0; s < ex.size(); ++s) {
        const auto g = forward(cfg.params, ex[s]);
        for (std::size_t i = 0; i < plane; ++i)
            EXPECT_NEAR(cache.out[s * plane + i], g.values[i], 1e-12 * (1.0 + std::abs(g.values[i])));
    }
}

TEST(Forward, ShapeMismatch) {
    const auto p = zero_params(micro_arch());
    std::vector<double> s(15), ok(16);
    EXPECT_THROW(forward(p, s, ok, 1.0), ShapeMismatch);
    EXPECT_THROW(forward(p, ok, s, 1.0), ShapeMismatch);
    std::vector<std::uint8_t> target(63);
    const Example ex{ok, ok, 1.0, target};
    EXPECT_THROW(backward(p, std::span<const Example>(&ex, 1)), ShapeMismatch);
    EXPECT_THROW(backward(p, std::span<const Example>{}), ShapeMismatch);
}

TEST(Loss, Contract) {
    BinaryImage ones(64), zeros(64);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) ones.set(r, c, true);
    PixelGrid zero(64);
    EXPECT_EQ(loss(zero, ones), 4096.0);
    EXPECT_EQ(loss(zero, zeros), 0.0);
    EXPECT_EQ(mean_pixel_loss(zero, ones), 1.0);
    EXPECT_THROW(loss(PixelGrid(4), ones), ShapeMismatch);

    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        PixelGrid g(4);
        for (double& v : g.values) v = uniform(rng, -1.0, 2.0);
        const auto t = random_image(rng, 4, 0.5);
        std::vector<double> gv(g.values);
        EXPECT_NEAR(loss(g, t), oracle::loss(gv, t), 1e-12);
        EXPECT_GT(loss(g, t), 0.0);
        PixelGrid exact(4);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) exact.values[std::size_t(r * 4 + c)] = t(r, c);
        EXPECT_EQ(loss(exact, t), 0.0);
    }
}

TEST(Backward, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto cfg = gradcheck::random_config(seed);
        const auto res = gradcheck::check(cfg, 100, 1e-4, seed);
        EXPECT_EQ(res.checked, 100) << "seed " << seed;
        EXPECT_LT(res.max_rel_err, 1e-4) << "seed " << seed << " worst " << res.worst;
    }
}

TEST(Backward, LossMatchesBatchLoss) {
    const auto cfg = gradcheck::random_config(3);
    const auto ex = cfg.batch.examples();
    EXPECT_DOUBLE_EQ(backward(cfg.params, ex).loss, batch_loss(cfg.params, ex));
}

TEST(Backward, ZeroLossGivesZeroGradients) {
    ArchConfig a = micro_arch();
    auto p = init_params(a, 9);
    // Zero fusion weights and biases: output is the constant relu(conv bias chain) = 0
    // everywhere, matching an all-zero target.
    for (double& w : p.fusion.weight.data) w = 0.0;
    std::vector<double> s(16, 0.5);
    std::vector<std::uint8_t> target(64, 0);
    const Example ex{s, s, 1.5, target};
    const auto res = backward(p, std::span<const Example>(&ex, 1));
    EXPECT_EQ(res.loss, 0.0);
    for (const Tensor* t : res.grads.tensors())
        for (double g : t->data) EXPECT_EQ(g, 0.0);
}

TEST(Backward, DuplicatedSampleMatchesSingle) {
    const auto cfg = gradcheck::random_config(11);
    const auto ex = cfg.batch.examples();
    const std::vector<Example> one{ex[0]}, two{ex[0], ex[0]};
    const auto a = backward(cfg.params, one);
    const auto b = backward(cfg.params, two);
    EXPECT_EQ(a.loss, b.loss);
    const auto ta = a.grads.tensors(), tb = b.grads.tensors();
    for (std::size_t k = 0; k < ta.size(); ++k)
        for (std::size_t i = 0; i < ta[k]->size(); ++i)
            EXPECT_NEAR(ta[k]->data[i], tb[k]->data[i], 1e-12 * (1.0 + std::abs(ta[k]->data[i])));
}

TEST(Backward, Deterministic) {
    const auto cfg = gradcheck::random_config(12);
    const auto ex = cfg.batch.examples();
    EXPECT_EQ(backward(cfg.params, ex).grads, backward(cfg.params, ex).grads);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    const auto a = micro_arch();
    auto p = init_params(a, 1);
    const auto before = p;
    auto st = make_adam_state(a);
    adam_step(p, zero_params(a), st);
    EXPECT_EQ(p, before);
    EXPECT_EQ(st.t, 1);
}

TEST(Adam, FirstStepHandCalculation) {
    ArchConfig a;
    a.d = 1;
    a.n_points = 1;
    a.branch_widths = {1};
    a.channels = 1;
    a.kernel = 1;
    auto p = zero_params(a);
    auto g = zero_params(a);
    g.convs[2].bias.data[0] = 1.0;
    auto st = make_adam_state(a);  // lr 1e-5
    adam_step(p, g, st);
    // m_hat = 1, v_hat = 1 -> step = lr * 1 / (1 + 1e-8)
    EXPECT_NEAR(p.convs[2].bias.data[0], -1e-5 / (1.0 + 1e-8), 1e-20);
    EXPECT_DOUBLE_EQ(st.m.convs[2].bias.data[0], 0.1);
    EXPECT_NEAR(st.v.convs[2].bias.data[0], 0.001, 1e-18);

    // Second step with gradient 0.5, hand-evaluated.
    g.convs[2].bias.data[0] = 0.5;
    const double w1 = p.convs[2].bias.data[0];
    adam_step(p, g, st);
    const double m2 = 0.9 * 0.1 + 0.1 * 0.5, v2 = 0.999 * 0.001 + 0.001 * 0.25;
    const double mh = m2 / (1 - 0.81), vh = v2 / (1 - 0.999 * 0.999);
    EXPECT_NEAR(p.convs[2].bias.data[0], w1 - 1e-5 * mh / (std::sqrt(vh) + 1e-8), 1e-18);
    EXPECT_EQ(st.t, 2);
}

TEST(Adam, FirstStepOpposesGradientSign) {
    const auto cfg = gradcheck::random_config(5);
    auto p = cfg.params;
    const auto before = p;
    const auto g = backward(p, cfg.batch.examples()).grads;
    auto st = make_adam_state(p.arch, {1e-3, 0.9, 0.999, 1e-8});
    adam_step(p, g, st);
    const auto tp = p.tensors();
    const auto tb = before.tensors(), tg = g.tensors();
    for (std::size_t k = 0; k < tp.size(); ++k)
        for (std::size_t i = 0; i < tp[k]->size(); ++i) {
            const double delta = tp[k]->data[i] - tb[k]->data[i];
            if (tg[k]->data[i] > 0) {
                EXPECT_LT(delta, 0.0);
            } else if (tg[k]->data[i] < 0) {
                EXPECT_GT(delta, 0.0);
            } else {
                EXPECT_EQ(delta, 0.0);
            }
        }
}

TEST(Adam, ShapeMismatch) {
    auto p = zero_params(micro_arch());
    ArchConfig other = micro_arch();
    other.branch_widths = {5};
    auto st = make_adam_state(micro_arch());
    EXPECT_THROW(adam_step(p, zero_params(other), st), ShapeMismatch);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Rng rng(77);
    for (int trial = 0; trial < 5; ++trial) {
        auto cfg = gradcheck::random_config(200 + std::uint64_t(trial));
        auto st = make_adam_state(cfg.params.arch, {uniform(rng, 1e-6, 1e-2), 0.85, 0.995, 1e-7});
        // Non-trivial moments and step count.
        for (int s = 0; s < 3; ++s) adam_step(cfg.params, backward(cfg.params, cfg.batch.examples()).grads, st);
        Checkpoint ck{cfg.params, st, 3};
        const auto bytes = serialize_checkpoint(ck);
        const auto back = parse_checkpoint(bytes);
        EXPECT_EQ(back, ck);
        EXPECT_EQ(serialize_checkpoint(back), bytes);
    }
}

TEST(Checkpoint, FileRoundTripAndErrors) {
    const auto dir = std::filesystem::temp_directory_path() / "invdesign_test_ckpt";
    std::filesystem::create_directories(dir);
    const auto ck = make_checkpoint(init_params(micro_arch(), 3));
    save_checkpoint(ck, dir / "a.ckpt");
    EXPECT_EQ(load_checkpoint(dir / "a.ckpt"), ck);

    const auto bytes = serialize_checkpoint(ck);
    EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 8)), FormatError);
    EXPECT_THROW(parse_checkpoint(bytes + "x"), FormatError);
    EXPECT_THROW(parse_checkpoint("NOTACKPT" + bytes.substr(8)), FormatError);
    EXPECT_THROW(parse_checkpoint(""), FormatError);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
    std::filesystem::remove_all(dir);
}
