#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bseg/bayesnet/network.hpp"
#include "bseg/core/log.hpp"

namespace bseg::net {

struct TrainConfig {
    double lr = 0.01;
    double momentum = 0.9;
    std::size_t batch = 4;
    std::size_t iterations = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        // zero is accepted as a no-op optimizer
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
        if (batch < 1) throw ConfigError("batch size must be >= 1");
    }
};

/// v' = momentum * v - lr * g; w' = w + v'. Running statistics are left alone.
inline void sgd_update(NetworkWeights& w, const NetworkWeights& g, NetworkWeights& v, double lr, double momentum) {
    std::vector<std::vector<double>*> pw, pv;
    std::vector<const std::vector<double>*> pg;
    w.for_each_param([&](const std::string&, std::vector<double>& x) { pw.push_back(&x); });
    g.for_each_param([&](const std::string&, const std::vector<double>& x) { pg.push_back(&x); });
    v.for_each_param([&](const std::string&, std::vector<double>& x) { pv.push_back(&x); });
    if (pw.size() != pg.size() || pw.size() != pv.size()) throw ShapeError("sgd_update: layer count mismatch");
    for (std::size_t t = 0; t < pw.size(); ++t) {
        auto &W = *pw[t], &V = *pv[t];
        const auto& G = *pg[t];
        if (W.size() != G.size() || W.size() != V.size()) throw ShapeError("sgd_update: tensor size mismatch");
        for (std::size_t i = 0; i < W.size(); ++i) {
            V[i] = momentum * V[i] - lr * G[i];
            W[i] += V[i];
        }
    }
    ++w.step;
}

inline void sgd_update(NetworkWeights& w, const NetworkWeights& g, NetworkWeights& v, const TrainConfig& cfg) {
    sgd_update(w, g, v, cfg.lr, cfg.momentum);
}

/// Paired image/label slices; labels are single-channel images holding label indices.
struct SliceDataset {
    std::vector<Image2D> images, labels;
    std::size_t size() const noexcept { return images.size(); }
};

/// Slices a normalized volume and its labels along `axis`, resizing each plane to (h, w): bilinear for the
/// image, nearest for the labels. A zero target extent means the native extent rounded up to a multiple of 2^depth.
inline void append_slices(SliceDataset& ds, const Volume3D& image, const LabelVolume& labels, Axis axis,
                          unsigned depth, std::size_t h = 0, std::size_t w = 0) {
    if (image.dims() != labels.dims()) throw ShapeError("append_slices: image and label dims differ");
    auto im = slice_stack(image, axis);
    auto lb = slice_stack(labels, axis);
    for (std::size_t s = 0; s < im.size(); ++s) {
        const std::size_t th = h ? h : pooled_extent(im[s].h, depth);
        const std::size_t tw = w ? w : pooled_extent(im[s].w, depth);
        ds.images.push_back(resize_bilinear(im[s], th, tw));
        ds.labels.push_back(resize_nearest(lb[s], th, tw));
    }
}

struct TrainLog {
    std::vector<double> loss;  // per iteration
    struct Epoch {
        std::size_t index = 0, last_iteration = 0;
        std::vector<double> accuracy;  // per label; NaN when the label never occurred

        friend bool operator==(const Epoch& a, const Epoch& b) {
            if (a.index != b.index || a.last_iteration != b.last_iteration || a.accuracy.size() != b.accuracy.size())
                return false;
            for (std::size_t l = 0; l < a.accuracy.size(); ++l)
                if (a.accuracy[l] != b.accuracy[l] && !(std::isnan(a.accuracy[l]) && std::isnan(b.accuracy[l])))
                    return false;
            return true;
        }
    };
    std::vector<Epoch> epochs;
    unsigned num_labels = 2;

    std::string csv() const {
        std::ostringstream os;
        os.precision(17);
        os << "iteration,loss,epoch";
        for (unsigned l = 0; l < num_labels; ++l) os << ",accuracy_" << l;
        os << '\n';
        std::size_t e = 0;
        for (std::size_t i = 0; i < loss.size(); ++i) {
            os << i << ',' << loss[i];
            if (e < epochs.size() && epochs[e].last_iteration == i) {
                os << ',' << epochs[e].index;
                for (double a : epochs[e].accuracy) {
                    os << ',';
                    if (std::isfinite(a)) os << a;
                }
                ++e;
            } else {
                os << ',';
                for (unsigned l = 0; l < num_labels; ++l) os << ',';
            }
            os << '\n';
        }
        return os.str();
    }

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
        out << csv();
        if (!out) throw IoError("write failed for '" + path.string() + "'");
    }
    friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

struct TrainResult {
    NetworkWeights weights;
    TrainLog log;
};

/// Shuffled mini-batch SGD with momentum. Each epoch visits every slice once in a seeded order; the final
/// batch of an epoch may be short. Starts from `initial` when given, otherwise from seeded He initialization.
inline TrainResult train(const SliceDataset& ds, const NetworkConfig& net_cfg, const TrainConfig& cfg,
                         const NetworkWeights* initial = nullptr) {
    cfg.validate();
    net_cfg.validate();
    if (ds.size() == 0) throw ArgumentError("train: empty dataset");
    if (ds.labels.size() != ds.images.size()) throw ShapeError("train: image/label count mismatch");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        require_divisible(net_cfg, ds.images[i].h, ds.images[i].w);
        if (ds.labels[i].h != ds.images[i].h || ds.labels[i].w != ds.images[i].w)
            throw ShapeError("train: label slice " + std::to_string(i) + " does not match its image");
    }
    TrainResult r;
    r.weights = initial ? *initial : init_weights(net_cfg, derive_seed(cfg.seed, "init"));
    if (!(r.weights.config == net_cfg)) throw ConfigError("train: initial weights were built for another config");
    NetworkWeights velocity = zeros_like(r.weights);
    const unsigned L = net_cfg.num_labels;
    r.log.num_labels = L;

    std::vector<std::size_t> order(ds.size());
    std::size_t cursor = order.size(), epoch = 0;
    std::vector<std::size_t> correct(L, 0), total(L, 0);
    const auto close_epoch = [&](std::size_t it) {
        TrainLog::Epoch e{epoch, it, std::vector<double>(L)};
        for (unsigned l = 0; l < L; ++l)
            e.accuracy[l] = total[l] ? static_cast<double>(correct[l]) / static_cast<double>(total[l])
                                     : std::numeric_limits<double>::quiet_NaN();
        r.log.epochs.push_back(std::move(e));
        std::fill(correct.begin(), correct.end(), 0);
        std::fill(total.begin(), total.end(), 0);
        ++epoch;
    };

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        if (cursor >= order.size()) {
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), std::mt19937_64(derive_seed(cfg.seed, "shuffle", epoch)));
            cursor = 0;
        }
        const std::size_t end = std::min(cursor + cfg.batch, order.size());
        std::vector<const Image2D*> imgs;
        std::vector<std::uint8_t> labels;
        for (std::size_t k = cursor; k < end; ++k) {
            imgs.push_back(&ds.images[order[k]]);
            for (double v : ds.labels[order[k]].data) labels.push_back(static_cast<std::uint8_t>(v));
        }
        cursor = end;
        const Tensor x = make_batch(imgs);
        LossGrad lg;
        try {
            lg = loss_and_grad(r.weights, x, labels, derive_seed(cfg.seed, "dropout", it));
        } catch (const NumericError& e) {
            throw DivergenceError("training diverged at iteration " + std::to_string(it) + ": " + e.what(), it);
        }
        if (!std::isfinite(lg.loss))
            throw DivergenceError("training diverged at iteration " + std::to_string(it) + ": loss is not finite", it);
        r.log.loss.push_back(lg.loss);

        const std::size_t P = x.plane();
        for (std::size_t i = 0; i < x.n; ++i) {
            const double* z = lg.logits.sample(i);
            for (std::size_t p = 0; p < P; ++p) {
                unsigned best = 0;
                for (unsigned l = 1; l < L; ++l)
                    if (z[l * P + p] > z[best * P + p]) best = l;
                const unsigned t = labels[i * P + p];
                ++total[t];
                if (best == t) ++correct[t];
            }
        }
        update_running_stats(r.weights, lg.trace);
        sgd_update(r.weights, lg.grad, velocity, cfg);
        if (cursor >= order.size()) close_epoch(it);
        if (log::threshold() >= log::Level::debug)
            log::debug("iteration " + std::to_string(it) + " loss " + std::to_string(lg.loss));
    }
    if (cursor != 0 && cursor < order.size()) close_epoch(cfg.iterations - 1);
    return r;
}

}  // namespace bseg::net
