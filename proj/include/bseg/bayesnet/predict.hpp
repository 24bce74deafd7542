#pragma once

#include <cstdint>
#include <vector>

#include "bseg/bayesnet/network.hpp"

namespace bseg::net {

struct McOptions {
    unsigned samples = 6;
    std::uint64_t seed = 0;
    Axis axis = Axis::z;
    /// In-plane network input size; 0 means the native extent rounded up to a multiple of 2^depth.
    std::size_t height = 0, width = 0;
    /// Dropout off and a single pass; the uncertainty volume is then zero.
    bool deterministic = false;
    bool keep_samples = false;
};

struct McResult {
    ProbVolume mean;
    UncertaintyVolume uncertainty;
    std::vector<ProbVolume> samples;  // filled when keep_samples is set
};

namespace detail {

/// Softmax per pixel of a 1 x L x h x w logit tensor, as an h x w x L image.
inline Image2D softmax_image(const Tensor& logits) {
    const std::size_t L = logits.c, P = logits.plane();
    Image2D out(logits.h, logits.w, L);
    for (std::size_t p = 0; p < P; ++p) softmax_pixels(logits.v.data(), L, P, p, out.data.data() + p * L);
    return out;
}

}  // namespace detail

/// Runs the network over every slice `samples` times with independent dropout masks. Each sample's
/// probabilities are resized back to the native plane and renormalized; the mean is the arithmetic mean of
/// those maps. The uncertainty is the population variance of the label-1 probability across samples (for
/// more than two labels, the mean of the per-label variances). `vol` must already be intensity-normalized.
inline McResult mc_predict(const NetworkWeights& W, const Volume3D& vol, const McOptions& opt = {}) {
    if (opt.samples == 0) throw ArgumentError("mc_predict: sample count must be >= 1");
    const auto& cfg = W.config;
    const unsigned L = cfg.num_labels;
    const unsigned T = opt.deterministic ? 1 : opt.samples;
    const Mode mode = opt.deterministic ? Mode::deterministic : Mode::mc_test;
    const auto slices = slice_stack(vol, opt.axis);
    const std::size_t S = slices.size();
    const std::size_t h = slices[0].h, w = slices[0].w;
    const std::size_t th = opt.height ? opt.height : pooled_extent(h, cfg.depth);
    const std::size_t tw = opt.width ? opt.width : pooled_extent(w, cfg.depth);
    require_divisible(cfg, th, tw);

    // per slice: running sums for the mean, Welford state for the variance
    std::vector<Image2D> sum(S, Image2D(h, w, L, 0.0)), wmean(S, Image2D(h, w, L, 0.0)), m2(S, Image2D(h, w, L, 0.0));
    std::vector<std::vector<Image2D>> kept(opt.keep_samples ? T : 0, std::vector<Image2D>(S));
    for (unsigned t = 0; t < T; ++t) {
        const std::uint64_t sample_seed = derive_seed(opt.seed, "mc-sample", t);
        for (std::size_t s = 0; s < S; ++s) {
            const Image2D in = resize_bilinear(slices[s], th, tw);
            const Tensor logits = forward(W, make_batch({&in}), mode, derive_seed(sample_seed, "slice", s));
            Image2D p = resize_bilinear(detail::softmax_image(logits), h, w);
            renormalize_simplex(p.data, L);
            const double k = static_cast<double>(t + 1);
            for (std::size_t i = 0; i < p.data.size(); ++i) {
                sum[s].data[i] += p.data[i];
                const double delta = p.data[i] - wmean[s].data[i];
                wmean[s].data[i] += delta / k;
                m2[s].data[i] += delta * (p.data[i] - wmean[s].data[i]);
            }
            if (opt.keep_samples) kept[t][s] = std::move(p);
        }
    }
    for (auto& img : sum)
        for (auto& x : img.data) x /= static_cast<double>(T);

    // a mean of simplex points is already on the simplex; it is not renormalized so that it stays the exact mean
    auto [d, mean] = bseg::detail::restack_generic(sum, opt.axis);
    McResult r{ProbVolume(bseg::detail::restacked_grid(d, vol.grid()), L, std::move(mean)), {}, {}};
    std::vector<Image2D> var(S, Image2D(h, w, 1, 0.0));
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t p = 0; p < h * w; ++p) {
            if (L == 2) {
                var[s].data[p] = m2[s].data[p * L + 1] / static_cast<double>(T);
            } else {
                double acc = 0.0;
                for (unsigned l = 0; l < L; ++l) acc += m2[s].data[p * L + l] / static_cast<double>(T);
                var[s].data[p] = acc / static_cast<double>(L);
            }
        }
    auto [dv, vv] = bseg::detail::restack_generic(var, opt.axis);
    r.uncertainty = UncertaintyVolume(bseg::detail::restacked_grid(dv, vol.grid()), std::move(vv));
    for (auto& samp : kept) {
        auto [ds, data] = bseg::detail::restack_generic(samp, opt.axis);
        r.samples.emplace_back(bseg::detail::restacked_grid(ds, vol.grid()), L, std::move(data));
    }
    return r;
}

}  // namespace bseg::net
