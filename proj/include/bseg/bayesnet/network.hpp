#pragma once

// Encoder-decoder segmentation network with index unpooling and Monte Carlo dropout.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bseg/bayesnet/layers.hpp"
#include "bseg/core/seed.hpp"
#include "bseg/preprocess/preprocess.hpp"

namespace bseg::net {

inline constexpr std::size_t kKernel = 3;

struct NetworkConfig {
    unsigned depth = 3;
    std::vector<std::size_t> channels{16, 32, 64};
    unsigned num_labels = 2;
    double dropout = 0.5;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    void validate() const {
        if (depth < 1) throw ConfigError("network depth must be >= 1");
        if (channels.size() != depth)
            throw ConfigError("network: " + std::to_string(channels.size()) + " channel counts for depth " +
                              std::to_string(depth));
        for (auto c : channels)
            if (c == 0) throw ConfigError("network channel counts must be positive");
        if (num_labels < 2) throw ConfigError("network needs at least 2 labels");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
        if (!(bn_eps > 0.0)) throw ConfigError("batch-norm epsilon must be positive");
        if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw ConfigError("batch-norm momentum must lie in [0, 1]");
    }
    /// Plane extents must be multiples of this.
    std::size_t divisor() const { return std::size_t{1} << depth; }
    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

enum class Mode { train, mc_test, deterministic };

/// Decoder block k runs at encoder level depth-1-k. Declaration order: encoder blocks, decoder blocks, head.
struct NetworkWeights {
    NetworkConfig config;
    std::vector<ConvLayer> enc_conv, dec_conv;
    std::vector<BatchNorm> enc_bn, dec_bn;
    ConvLayer head;
    std::uint64_t step = 0;

    NetworkWeights() = default;
    explicit NetworkWeights(const NetworkConfig& cfg) : config(cfg) {
        cfg.validate();
        const std::size_t D = cfg.depth;
        std::size_t cin = 1;
        for (std::size_t b = 0; b < D; ++b) {
            enc_conv.emplace_back(cin, cfg.channels[b], kKernel);
            enc_bn.emplace_back(cfg.channels[b]);
            cin = cfg.channels[b];
        }
        for (std::size_t k = 0; k < D; ++k) {
            const std::size_t level = D - 1 - k;
            const std::size_t out = level > 0 ? cfg.channels[level - 1] : cfg.channels[0];
            dec_conv.emplace_back(cfg.channels[level], out, kKernel);
            dec_bn.emplace_back(out);
        }
        head = ConvLayer(cfg.channels[0], cfg.num_labels, 1);
    }

    /// Trainable tensors in declaration order; f(name, vector&).
    template <class F>
    void for_each_param(F&& f) {
        visit(*this, f, false);
    }
    template <class F>
    void for_each_param(F&& f) const {
        visit(*this, f, false);
    }
    /// Every stored tensor in declaration order, including batch-norm running statistics.
    template <class F>
    void for_each_tensor(F&& f) {
        visit(*this, f, true);
    }
    template <class F>
    void for_each_tensor(F&& f) const {
        visit(*this, f, true);
    }

    std::size_t num_params() const {
        std::size_t n = 0;
        for_each_param([&](const std::string&, const std::vector<double>& v) { n += v.size(); });
        return n;
    }

    friend bool operator==(const NetworkWeights& a, const NetworkWeights& b) {
        if (!(a.config == b.config) || a.step != b.step) return false;
        std::vector<const std::vector<double>*> va, vb;
        a.for_each_tensor([&](const std::string&, const std::vector<double>& v) { va.push_back(&v); });
        b.for_each_tensor([&](const std::string&, const std::vector<double>& v) { vb.push_back(&v); });
        if (va.size() != vb.size()) return false;
        for (std::size_t i = 0; i < va.size(); ++i)
            if (*va[i] != *vb[i]) return false;
        return true;
    }

private:
    template <class Self, class F>
    static void visit(Self& self, F& f, bool running) {
        const auto conv = [&](const std::string& name, auto& c) {
            f(name + ".w", c.w);
            f(name + ".b", c.b);
        };
        const auto bn = [&](const std::string& name, auto& b) {
            f(name + ".gamma", b.gamma);
            f(name + ".beta", b.beta);
            if (running) {
                f(name + ".mean", b.mean);
                f(name + ".var", b.var);
            }
        };
        for (std::size_t b = 0; b < self.enc_conv.size(); ++b) {
            conv("enc" + std::to_string(b) + ".conv", self.enc_conv[b]);
            bn("enc" + std::to_string(b) + ".bn", self.enc_bn[b]);
        }
        for (std::size_t k = 0; k < self.dec_conv.size(); ++k) {
            conv("dec" + std::to_string(k) + ".conv", self.dec_conv[k]);
            bn("dec" + std::to_string(k) + ".bn", self.dec_bn[k]);
        }
        conv("head", self.head);
    }
};

/// Same layout, all zeros (gradient and velocity buffers).
inline NetworkWeights zeros_like(const NetworkWeights& w) {
    NetworkWeights z = w;
    z.for_each_tensor([](const std::string&, std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
    z.step = 0;
    return z;
}

/// He-normal kernels (std sqrt(2 / fan_in)), zero biases, unit BN scale, zero BN shift.
inline NetworkWeights init_weights(const NetworkConfig& cfg, std::uint64_t seed) {
    NetworkWeights w(cfg);
    std::mt19937_64 rng(seed);
    const auto fill = [&](ConvLayer& c) {
        std::normal_distribution<double> g(0.0, std::sqrt(2.0 / static_cast<double>(c.fan_in())));
        for (auto& x : c.w) x = g(rng);
    };
    for (auto& c : w.enc_conv) fill(c);
    for (auto& c : w.dec_conv) fill(c);
    fill(w.head);
    return w;
}

/// Activations kept for the backward pass.
struct Trace {
    struct Block {
        ConvCache conv;
        BnCache bn;
        Tensor relu_out;
    };
    std::vector<Block> enc, dec;
    std::vector<PoolIndices> pools;
    std::vector<std::vector<double>> dropout;  // dropout[k] sits before decoder block k
    ConvCache head;
};

inline void require_divisible(const NetworkConfig& cfg, std::size_t h, std::size_t w) {
    const std::size_t m = cfg.divisor();
    if (h == 0 || w == 0 || h % m || w % m)
        throw ShapeError("network input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by 2^" +
                         std::to_string(cfg.depth) + " = " + std::to_string(m));
}

/// Per-pixel logits (N x L x H x W). Dropout masks are derived from `seed`; they are only drawn in train and
/// mc_test modes. Train mode uses batch statistics and fills `trace` when given.
inline Tensor forward(const NetworkWeights& W, const Tensor& x, Mode mode, std::uint64_t seed, Trace* trace = nullptr) {
    const auto& cfg = W.config;
    require_divisible(cfg, x.h, x.w);
    if (x.c != 1) throw ShapeError("network input must have 1 channel, got " + std::to_string(x.c));
    const bool train = mode == Mode::train;
    const bool drop = mode != Mode::deterministic && cfg.dropout > 0.0;
    const std::size_t D = cfg.depth;
    Trace local;
    Trace& t = trace ? *trace : local;
    const bool keep = trace != nullptr;
    t.enc.assign(D, {});
    t.dec.assign(D, {});
    t.pools.assign(D, {});
    t.dropout.assign(D, {});

    Tensor a = x;
    for (std::size_t b = 0; b < D; ++b) {
        const std::string name = "enc" + std::to_string(b);
        a = conv_forward(W.enc_conv[b], a, keep ? &t.enc[b].conv : nullptr);
        require_finite(a, name + ".conv");
        BnCache bn;
        a = bn_forward(W.enc_bn[b], a, cfg.bn_eps, train ? &bn : nullptr);
        require_finite(a, name + ".bn");
        a = relu_forward(std::move(a));
        if (keep) {
            t.enc[b].bn = std::move(bn);
            t.enc[b].relu_out = a;
        }
        a = maxpool_forward(a, t.pools[b]);
    }
    for (std::size_t k = 0; k < D; ++k) {
        const std::size_t level = D - 1 - k;
        const std::string name = "dec" + std::to_string(k);
        if (drop) {
            t.dropout[k] = dropout_mask(a.size(), cfg.dropout, derive_seed(seed, "dropout", k));
            a = apply_mask(std::move(a), t.dropout[k]);
        }
        a = unpool_forward(a, t.pools[level]);
        a = conv_forward(W.dec_conv[k], a, keep ? &t.dec[k].conv : nullptr);
        require_finite(a, name + ".conv");
        BnCache bn;
        a = bn_forward(W.dec_bn[k], a, cfg.bn_eps, train ? &bn : nullptr);
        require_finite(a, name + ".bn");
        a = relu_forward(std::move(a));
        if (keep) {
            t.dec[k].bn = std::move(bn);
            t.dec[k].relu_out = a;
        }
    }
    a = conv_forward(W.head, a, keep ? &t.head : nullptr);
    require_finite(a, "head");
    return a;
}

/// Gradients w.r.t. every trainable tensor, given dL/dlogits and the trace of a train-mode forward pass.
inline NetworkWeights backward(const NetworkWeights& W, const Trace& t, const Tensor& dlogits) {
    const std::size_t D = W.config.depth;
    NetworkWeights g = zeros_like(W);
    Tensor d = conv_backward(W.head, t.head, dlogits, g.head);
    for (std::size_t k = D; k-- > 0;) {
        const std::size_t level = D - 1 - k;
        d = relu_backward(t.dec[k].relu_out, std::move(d));
        d = bn_backward(W.dec_bn[k], t.dec[k].bn, d, g.dec_bn[k]);
        d = conv_backward(W.dec_conv[k], t.dec[k].conv, d, g.dec_conv[k]);
        d = unpool_backward(d, t.pools[level]);
        d = apply_mask(std::move(d), t.dropout[k]);
    }
    for (std::size_t b = D; b-- > 0;) {
        d = maxpool_backward(d, t.pools[b]);
        d = relu_backward(t.enc[b].relu_out, std::move(d));
        d = bn_backward(W.enc_bn[b], t.enc[b].bn, d, g.enc_bn[b]);
        d = conv_backward(W.enc_conv[b], t.enc[b].conv, d, g.enc_conv[b]);
    }
    return g;
}

struct LossGrad {
    double loss = 0.0;
    NetworkWeights grad;
    Trace trace;  // batch statistics for the running-average update
    Tensor logits;
};

/// Train-mode forward, mean pixel cross-entropy and reverse-mode gradients. Labels are per pixel, sample-major.
inline LossGrad loss_and_grad(const NetworkWeights& W, const Tensor& x, const std::vector<std::uint8_t>& labels,
                              std::uint64_t seed) {
    LossGrad r;
    r.logits = forward(W, x, Mode::train, seed, &r.trace);
    Tensor dz;
    r.loss = softmax_cross_entropy(r.logits, labels, &dz);
    if (!std::isfinite(r.loss)) throw NumericError("non-finite loss");
    r.grad = backward(W, r.trace, dz);
    return r;
}

/// Folds the batch statistics recorded in a train-mode trace into the running averages.
inline void update_running_stats(NetworkWeights& W, const Trace& t) {
    for (std::size_t b = 0; b < W.enc_bn.size(); ++b) bn_update_running(W.enc_bn[b], t.enc[b].bn, W.config.bn_momentum);
    for (std::size_t k = 0; k < W.dec_bn.size(); ++k) bn_update_running(W.dec_bn[k], t.dec[k].bn, W.config.bn_momentum);
}

/// Stacks single-channel images into an N x 1 x H x W batch.
inline Tensor make_batch(const std::vector<const Image2D*>& images) {
    if (images.empty()) throw ArgumentError("empty batch");
    const std::size_t h = images[0]->h, w = images[0]->w;
    Tensor x(images.size(), 1, h, w);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& im = *images[i];
        if (im.h != h || im.w != w || im.channels != 1)
            throw ShapeError("batch image " + std::to_string(i) + " is " + std::to_string(im.h) + "x" +
                             std::to_string(im.w) + "x" + std::to_string(im.channels) + ", expected " +
                             std::to_string(h) + "x" + std::to_string(w) + "x1");
        std::copy(im.data.begin(), im.data.end(), x.sample(i));
    }
    return x;
}

}  // namespace bseg::net
