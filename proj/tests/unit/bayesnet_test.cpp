#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bseg/bayesnet/predict.hpp"
#include "bseg/bayesnet/serialize.hpp"
#include "bseg/bayesnet/train.hpp"
#include "bseg/phantom/phantom.hpp"
#include "test_util.hpp"

using namespace bseg;
using namespace bseg::net;

namespace {

Tensor random_tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Tensor t(n, c, h, w);
    for (auto& x : t.v) x = g(rng);
    return t;
}

std::vector<std::uint8_t> random_labels(std::size_t n, unsigned L, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::uint8_t> v(n);
    for (auto& x : v) x = static_cast<std::uint8_t>(rng() % L);
    return v;
}

NetworkConfig small_config(unsigned depth, std::vector<std::size_t> ch, double dropout = 0.5) {
    NetworkConfig c;
    c.depth = depth;
    c.channels = std::move(ch);
    c.dropout = dropout;
    return c;
}

struct GradStats {
    double worst = 0.0;
    std::string where;
    std::size_t checked = 0;
};

// Central differences over every trainable scalar, h = 1e-5. Relative error |a-n| / max(|a|, |n|, 1e-6):
// the floor covers components that vanish analytically (conv biases feeding batch norm).
GradStats finite_difference_check(NetworkWeights w, const Tensor& x, const std::vector<std::uint8_t>& y,
                                  std::uint64_t seed) {
    const auto analytic = loss_and_grad(w, x, y, seed).grad;
    std::vector<const std::vector<double>*> ga;
    std::vector<std::string> names;
    analytic.for_each_param([&](const std::string& n, const std::vector<double>& v) {
        ga.push_back(&v);
        names.push_back(n);
    });
    std::vector<std::vector<double>*> pw;
    w.for_each_param([&](const std::string&, std::vector<double>& v) { pw.push_back(&v); });
    GradStats s;
    const double h = 1e-5;
    for (std::size_t t = 0; t < pw.size(); ++t)
        for (std::size_t i = 0; i < pw[t]->size(); ++i) {
            const double orig = (*pw[t])[i];
            (*pw[t])[i] = orig + h;
            const double lp = softmax_cross_entropy(forward(w, x, Mode::train, seed), y, nullptr);
            (*pw[t])[i] = orig - h;
            const double lm = softmax_cross_entropy(forward(w, x, Mode::train, seed), y, nullptr);
            (*pw[t])[i] = orig;
            const double num = (lp - lm) / (2.0 * h), a = (*ga[t])[i];
            const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6});
            ++s.checked;
            if (rel > s.worst) {
                s.worst = rel;
                s.where = names[t] + "[" + std::to_string(i) + "]";
            }
        }
    return s;
}

SliceDataset phantom_slices(std::size_t subjects, double scale, unsigned depth, std::uint64_t seed0 = 100) {
    SliceDataset ds;
    for (std::size_t s = 0; s < subjects; ++s) {
        auto cfg = phantom::sample_subject(phantom::scaled(phantom::PhantomConfig{}, scale), seed0 + s);
        const auto ph = phantom::generate(cfg);
        append_slices(ds, normalize_intensity(ph.image), ph.mask, Axis::z, depth);
    }
    return ds;
}

}  // namespace

TEST(NetworkConfig, Validation) {
    EXPECT_NO_THROW(NetworkConfig{}.validate());
    EXPECT_EQ(NetworkConfig{}.channels, (std::vector<std::size_t>{16, 32, 64}));
    EXPECT_THROW(small_config(0, {}).validate(), ConfigError);
    EXPECT_THROW(small_config(2, {4}).validate(), ConfigError);
    EXPECT_THROW(small_config(1, {0}).validate(), ConfigError);
    EXPECT_THROW(small_config(1, {4}, 1.0).validate(), ConfigError);
    EXPECT_THROW(small_config(1, {4}, -0.1).validate(), ConfigError);
}

TEST(Network, LayoutAndInit) {
    const auto w = init_weights(NetworkConfig{}, 1);
    ASSERT_EQ(w.enc_conv.size(), 3u);
    EXPECT_EQ(w.enc_conv[0].cin, 1u);
    EXPECT_EQ(w.enc_conv[2].cout, 64u);
    EXPECT_EQ(w.dec_conv[0].cin, 64u);
    EXPECT_EQ(w.dec_conv[0].cout, 32u);
    EXPECT_EQ(w.dec_conv[2].cout, 16u);
    EXPECT_EQ(w.head.cin, 16u);
    EXPECT_EQ(w.head.cout, 2u);
    EXPECT_EQ(w.head.k, 1u);
    // He scaling: sample std of the largest kernel near sqrt(2 / fan_in)
    const auto& k = w.dec_conv[0].w;
    double ss = 0.0;
    for (double x : k) ss += x * x;
    EXPECT_NEAR(std::sqrt(ss / static_cast<double>(k.size())), std::sqrt(2.0 / (64.0 * 9.0)), 0.01);
    for (double b : w.enc_conv[1].b) EXPECT_EQ(b, 0.0);
    for (double g : w.dec_bn[1].gamma) EXPECT_EQ(g, 1.0);
    EXPECT_EQ(init_weights(NetworkConfig{}, 1), w);
    EXPECT_FALSE(init_weights(NetworkConfig{}, 2) == w);
}

TEST(Network, ZeroHeadGivesUniformSoftmax) {
    auto w = init_weights(small_config(2, {4, 8}), 3);
    std::fill(w.head.w.begin(), w.head.w.end(), 0.0);
    const Tensor x(2, 1, 8, 8, 0.0);
    for (Mode m : {Mode::train, Mode::mc_test, Mode::deterministic}) {
        const auto z = forward(w, x, m, 5);
        for (double v : z.v) EXPECT_EQ(v, 0.0);
    }
    std::vector<std::uint8_t> y(2 * 64, 1);
    EXPECT_NEAR(softmax_cross_entropy(forward(w, x, Mode::train, 5), y, nullptr), std::log(2.0), 1e-15);
}

TEST(Network, RejectsIndivisibleInput) {
    const auto w = init_weights(small_config(3, {2, 2, 2}), 0);
    EXPECT_THROW(forward(w, Tensor(1, 1, 12, 16), Mode::deterministic, 0), ShapeError);
    EXPECT_THROW(forward(w, Tensor(1, 2, 16, 16), Mode::deterministic, 0), ShapeError);
    EXPECT_NO_THROW(forward(w, Tensor(1, 1, 8, 16), Mode::deterministic, 0));
}

TEST(Network, DeterministicModeIgnoresSeed) {
    const auto w = init_weights(small_config(2, {4, 8}), 4);
    const auto x = random_tensor(1, 1, 16, 16, 5);
    EXPECT_EQ(forward(w, x, Mode::deterministic, 1), forward(w, x, Mode::deterministic, 999));
    EXPECT_FALSE(forward(w, x, Mode::mc_test, 1) == forward(w, x, Mode::mc_test, 999));
    EXPECT_EQ(forward(w, x, Mode::mc_test, 7), forward(w, x, Mode::mc_test, 7));
}

TEST(Layers, PoolUnpoolRoundTrip) {
    const auto x = random_tensor(2, 3, 8, 6, 9);
    PoolIndices ix;
    const auto p = maxpool_forward(x, ix);
    const auto u = unpool_forward(p, ix);
    for (std::size_t nc = 0; nc < 6; ++nc)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                const double* plane = x.v.data() + nc * 48;
                const double* up = u.v.data() + nc * 48;
                double mx = -1e300;
                int nonzero = 0;
                for (std::size_t a = 0; a < 2; ++a)
                    for (std::size_t b = 0; b < 2; ++b) {
                        const std::size_t q = (2 * i + a) * 6 + 2 * j + b;
                        mx = std::max(mx, plane[q]);
                        if (up[q] != 0.0) {
                            ++nonzero;
                            EXPECT_EQ(up[q], plane[q]);
                        }
                    }
                EXPECT_EQ(nonzero, 1);
                EXPECT_EQ(p.v[nc * 12 + i * 3 + j], mx);
            }
    PoolIndices odd;
    EXPECT_THROW(maxpool_forward(Tensor(1, 1, 5, 4), odd), ShapeError);
}

TEST(Layers, DropoutExpectation) {
    const double rate = 0.5, c = 2.5;
    double acc = 0.0;
    const std::size_t masks = 10000, n = 64;
    for (std::size_t s = 0; s < masks; ++s)
        for (double m : dropout_mask(n, rate, derive_seed(11, "m", s))) acc += c * m;
    EXPECT_NEAR(acc / static_cast<double>(masks * n), c, 0.01 * c);
    const auto m = dropout_mask(100000, 0.3, 5);
    double mean = 0.0;
    for (double v : m) {
        EXPECT_TRUE(v == 0.0 || v == 1.0 / 0.7);
        mean += v;
    }
    EXPECT_NEAR(mean / 100000.0, 1.0, 0.01);
    EXPECT_TRUE(dropout_mask(10, 0.0, 1).empty());
}

TEST(Loss, Limits) {
    Tensor z(1, 3, 2, 2);
    std::vector<std::uint8_t> y{0, 1, 2, 1};
    EXPECT_NEAR(softmax_cross_entropy(z, y, nullptr), std::log(3.0), 1e-15);
    for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t l = 0; l < 3; ++l) z.v[l * 4 + p] = l == y[p] ? 50.0 : -50.0;
    EXPECT_LT(softmax_cross_entropy(z, y, nullptr), 1e-40);
    y[0] = 3;
    EXPECT_THROW(softmax_cross_entropy(z, y, nullptr), ArgumentError);
}

TEST(Gradient, OneBlockNetworkMatchesFiniteDifferences) {
    auto w = init_weights(small_config(1, {4}), 21);
    // non-trivial BN affine parameters so every term of the BN backward pass matters
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (auto* bn : {&w.enc_bn[0], &w.dec_bn[0]})
        for (std::size_t c = 0; c < bn->channels(); ++c) {
            bn->gamma[c] = u(rng);
            bn->beta[c] = u(rng) - 1.0;
        }
    const auto x = random_tensor(2, 1, 8, 8, 22);
    const auto y = random_labels(2 * 64, 2, 23);
    const auto s = finite_difference_check(w, x, y, 24);
    EXPECT_EQ(s.checked, w.num_params());
    EXPECT_LE(s.worst, 1e-4) << s.where;
}

TEST(Gradient, TwoBlockThreeLabelNetwork) {
    auto cfg = small_config(2, {3, 5}, 0.3);
    cfg.num_labels = 3;
    const auto w = init_weights(cfg, 31);
    const auto x = random_tensor(2, 1, 8, 8, 32);
    const auto y = random_labels(2 * 64, 3, 33);
    const auto s = finite_difference_check(w, x, y, 34);
    EXPECT_LE(s.worst, 1e-4) << s.where;
}

TEST(Gradient, ConvLayerAlone) {
    ConvLayer L(2, 3, 3);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& v : L.w) v = g(rng);
    for (auto& v : L.b) v = g(rng);
    const auto x = random_tensor(2, 2, 5, 4, 2);
    const auto dy = random_tensor(2, 3, 5, 4, 3);
    // L(x) = <dy, conv(x)>, so dL/dx = conv_backward(dy)
    ConvCache cache;
    conv_forward(L, x, &cache);
    ConvLayer gL(2, 3, 3);
    const auto dx = conv_backward(L, cache, dy, gL);
    const auto objective = [&](const Tensor& xx, const ConvLayer& LL) {
        const auto y = conv_forward(LL, xx, nullptr);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y.v[i] * dy.v[i];
        return s;
    };
    // linear in x and in the weights: central differences are exact up to rounding
    for (std::size_t i = 0; i < x.size(); i += 3) {
        Tensor xp = x, xm = x;
        xp.v[i] += 1e-5;
        xm.v[i] -= 1e-5;
        EXPECT_NEAR(dx.v[i], (objective(xp, L) - objective(xm, L)) / 2e-5, 1e-8);
    }
    for (std::size_t i = 0; i < L.w.size(); i += 5) {
        ConvLayer lp = L, lm = L;
        lp.w[i] += 1e-5;
        lm.w[i] -= 1e-5;
        EXPECT_NEAR(gL.w[i], (objective(x, lp) - objective(x, lm)) / 2e-5, 1e-8);
    }
}

TEST(Sgd, HandUnrolledSteps) {
    auto w = init_weights(small_config(1, {1}), 0);
    w.for_each_param([](const std::string&, std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
    auto g = zeros_like(w), v = zeros_like(w);
    g.for_each_param([](const std::string&, std::vector<double>& x) { std::fill(x.begin(), x.end(), 1.0); });

    auto w1 = w, v1 = v;
    sgd_update(w1, g, v1, 0.01, 0.0);
    w1.for_each_param([](const std::string&, const std::vector<double>& x) {
        for (double e : x) EXPECT_DOUBLE_EQ(e, -0.01);
    });
    EXPECT_EQ(w1.step, 1u);

    auto w2 = w, v2 = v;
    sgd_update(w2, zeros_like(w), v2, 0.01, 0.9);
    w2.for_each_param([](const std::string&, const std::vector<double>& x) {
        for (double e : x) EXPECT_EQ(e, 0.0);
    });

    auto w3 = w, v3 = v;
    sgd_update(w3, g, v3, 0.01, 0.9);
    sgd_update(w3, g, v3, 0.01, 0.9);
    w3.for_each_param([](const std::string&, const std::vector<double>& x) {
        for (double e : x) EXPECT_NEAR(e, -0.01 * (1.0 + 1.9), 1e-15);
    });
}

TEST(Train, ConfigValidation) {
    TrainConfig c;
    EXPECT_EQ(c.lr, 0.01);
    EXPECT_EQ(c.momentum, 0.9);
    EXPECT_EQ(c.batch, 4u);
    c.momentum = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lr = -0.1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.batch = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(train(SliceDataset{}, NetworkConfig{}, TrainConfig{}), ArgumentError);
}

TEST(Train, SmokeRunReducesLoss) {
    const auto net = small_config(2, {8, 16});
    const auto ds = phantom_slices(5, 0.5, net.depth);
    TrainConfig tc;
    tc.iterations = 200;
    tc.seed = 7;
    const auto r = train(ds, net, tc);
    ASSERT_EQ(r.log.loss.size(), 200u);
    EXPECT_LT(r.log.loss.back(), r.log.loss.front());
    EXPECT_EQ(r.weights.step, 200u);
    ASSERT_FALSE(r.log.epochs.empty());
    EXPECT_GT(r.log.epochs.back().accuracy[0], 0.9);
}

TEST(Train, DeterministicAndZeroLearningRate) {
    const auto net = small_config(2, {4, 4});
    const auto ds = phantom_slices(1, 0.5, net.depth);
    TrainConfig tc;
    tc.iterations = 12;
    tc.seed = 3;
    const auto a = train(ds, net, tc), b = train(ds, net, tc);
    EXPECT_EQ(a.log, b.log);
    EXPECT_EQ(a.log.csv(), b.log.csv());
    EXPECT_EQ(a.weights, b.weights);

    tc.lr = 0.0;
    const auto init = init_weights(net, derive_seed(tc.seed, "init"));
    const auto z = train(ds, net, tc);
    std::vector<std::vector<double>> before, after;
    init.for_each_param([&](const std::string&, const std::vector<double>& v) { before.push_back(v); });
    z.weights.for_each_param([&](const std::string&, const std::vector<double>& v) { after.push_back(v); });
    EXPECT_EQ(before, after);
}

TEST(Train, EpochBookkeepingAndCsv) {
    const auto net = small_config(1, {2});
    SliceDataset ds;
    for (int i = 0; i < 5; ++i) {
        Image2D im(4, 4, 1, 0.1 * i), lb(4, 4, 1, 0.0);
        lb.at(1, 1) = 1.0;
        ds.images.push_back(im);
        ds.labels.push_back(lb);
    }
    TrainConfig tc;
    tc.batch = 2;
    tc.iterations = 7;  // epochs of 3 batches (2, 2, 1)
    const auto r = train(ds, net, tc);
    ASSERT_EQ(r.log.epochs.size(), 3u);
    EXPECT_EQ(r.log.epochs[0].last_iteration, 2u);
    EXPECT_EQ(r.log.epochs[1].last_iteration, 5u);
    EXPECT_EQ(r.log.epochs[2].last_iteration, 6u);
    const auto csv = r.log.csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "iteration,loss,epoch,accuracy_0,accuracy_1");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
}

TEST(Train, DivergenceIsReportedWithIteration) {
    const auto net = small_config(1, {4});
    const auto ds = phantom_slices(1, 0.5, net.depth);
    TrainConfig tc;
    tc.lr = 1e200;
    tc.iterations = 50;
    try {
        train(ds, net, tc);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_LT(e.iteration(), 50u);
        EXPECT_NE(std::string(e.what()).find("iteration " + std::to_string(e.iteration())), std::string::npos);
    }
}

class McPredict : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        net_ = new NetworkConfig(small_config(2, {4, 8}));
        const auto ds = phantom_slices(2, 0.5, net_->depth);
        TrainConfig tc;
        tc.iterations = 30;
        weights_ = new NetworkWeights(train(ds, *net_, tc).weights);
        const auto ph = phantom::generate(phantom::scaled(phantom::PhantomConfig{}, 0.5));
        vol_ = new Volume3D(normalize_intensity(ph.image));
    }
    static void TearDownTestSuite() {
        delete net_;
        delete weights_;
        delete vol_;
    }
    static NetworkConfig* net_;
    static NetworkWeights* weights_;
    static Volume3D* vol_;
};
NetworkConfig* McPredict::net_ = nullptr;
NetworkWeights* McPredict::weights_ = nullptr;
Volume3D* McPredict::vol_ = nullptr;

TEST_F(McPredict, MeanIsExactMeanOfSamples) {
    McOptions o;
    o.seed = 9;
    o.keep_samples = true;
    const auto r = mc_predict(*weights_, *vol_, o);
    ASSERT_EQ(r.samples.size(), 6u);
    const auto d = r.mean.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        double s = 0.0;
        for (const auto& p : r.samples) s += p.data()[i];
        ASSERT_EQ(d[i], s / 6.0) << i;
    }
    // population variance of the label-1 probability
    double worst = 0.0, total = 0.0;
    for (std::size_t v = 0; v < r.mean.voxels(); ++v) {
        double m = 0.0, var = 0.0;
        for (const auto& p : r.samples) m += p.prob(v, 1);
        m /= 6.0;
        for (const auto& p : r.samples) var += (p.prob(v, 1) - m) * (p.prob(v, 1) - m);
        var /= 6.0;
        worst = std::max(worst, std::abs(var - r.uncertainty[v]));
        total += r.uncertainty[v];
    }
    EXPECT_LT(worst, 1e-15);
    EXPECT_GT(total, 0.0);
    EXPECT_EQ(r.mean.dims(), vol_->dims());
}

TEST_F(McPredict, FixedSeedIsBitIdentical) {
    McOptions o;
    o.seed = 4;
    const auto a = mc_predict(*weights_, *vol_, o), b = mc_predict(*weights_, *vol_, o);
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.uncertainty, b.uncertainty);
    o.seed = 5;
    EXPECT_FALSE(mc_predict(*weights_, *vol_, o).mean == a.mean);
}

TEST_F(McPredict, ZeroUncertaintyCases) {
    McOptions o;
    o.samples = 1;
    const auto one = mc_predict(*weights_, *vol_, o);
    for (double u : one.uncertainty.data()) ASSERT_EQ(u, 0.0);
    auto w0 = *weights_;
    w0.config.dropout = 0.0;
    o.samples = 6;
    const auto r = mc_predict(w0, *vol_, o);
    for (double u : r.uncertainty.data()) ASSERT_EQ(u, 0.0);
    o.deterministic = true;
    const auto single = mc_predict(w0, *vol_, o);
    for (std::size_t i = 0; i < r.mean.data().size(); ++i) ASSERT_NEAR(single.mean.data()[i], r.mean.data()[i], 1e-15);
    o.samples = 0;
    EXPECT_THROW(mc_predict(*weights_, *vol_, o), ArgumentError);
}

TEST_F(McPredict, ResizedInputPlane) {
    McOptions o;
    o.height = 24;
    o.width = 8;
    o.samples = 2;
    const auto r = mc_predict(*weights_, *vol_, o);
    EXPECT_EQ(r.mean.dims(), vol_->dims());
    o.height = 10;
    EXPECT_THROW(mc_predict(*weights_, *vol_, o), ShapeError);
}

TEST(Serialize, RoundTrip) {
    auto w = init_weights(small_config(2, {3, 5}, 0.25), 8);
    w.step = 77;
    w.enc_bn[1].var[2] = 0.125;
    const auto buf = encode_weights(w);
    EXPECT_EQ(std::string(buf.data(), 6), "BSEGW1");
    EXPECT_EQ(decode_weights(buf), w);
    bseg::testing::TempDir dir("weights");
    save_weights(w, dir / "w.bin");
    EXPECT_EQ(load_weights(dir / "w.bin"), w);
    // header: magic, depth, 2 channel counts, labels, 3 doubles, step; then 8-byte values
    EXPECT_EQ(buf.size(), 6u + 4u * 4u + 3u * 8u + 8u + 8u * [&] {
                              std::size_t n = 0;
                              w.for_each_tensor([&](const std::string&, const std::vector<double>& v) { n += v.size(); });
                              return n;
                          }());
}

TEST(Serialize, RejectsCorruptFiles) {
    const auto buf = encode_weights(init_weights(small_config(1, {2}), 1));
    auto bad = buf;
    bad[0] = 'X';
    EXPECT_THROW(decode_weights(bad), FormatError);
    EXPECT_THROW(decode_weights(std::vector<char>(buf.begin(), buf.end() - 3)), FormatError);
    auto longer = buf;
    longer.push_back(0);
    EXPECT_THROW(decode_weights(longer), FormatError);
    auto cfg = buf;
    cfg[6] = 0;  // depth 0
    EXPECT_THROW(decode_weights(cfg), FormatError);
    EXPECT_THROW(load_weights("/nonexistent/weights.bin"), IoError);
}
