#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bseg/core/error.hpp"
#include "bseg/core/log.hpp"
#include "bseg/volume/volume.hpp"

namespace bseg {

/// A 2D slice, row-major, with `channels` interleaved values per pixel.
struct Image2D {
    std::size_t h = 0, w = 0, channels = 1;
    std::vector<double> data;
    std::optional<std::size_t> slice_index;

    Image2D() = default;
    Image2D(std::size_t h_, std::size_t w_, std::size_t c_ = 1, double fill = 0.0)
        : h(h_), w(w_), channels(c_), data(h_ * w_ * c_, fill) {}

    std::size_t pixels() const noexcept { return h * w; }
    double& at(std::size_t i, std::size_t j, std::size_t c = 0) { return data[(i * w + j) * channels + c]; }
    double at(std::size_t i, std::size_t j, std::size_t c = 0) const { return data[(i * w + j) * channels + c]; }
    friend bool operator==(const Image2D& a, const Image2D& b) {
        return a.h == b.h && a.w == b.w && a.channels == b.channels && a.data == b.data;
    }
};

namespace detail {

/// In-plane axes (first, second) for slicing along `axis`.
inline std::pair<std::size_t, std::size_t> plane_axes(Axis axis) {
    switch (axis) {
        case Axis::x: return {1, 2};
        case Axis::y: return {0, 2};
        default: return {0, 1};
    }
}

template <class Get>
std::vector<Image2D> slice_generic(const Dims& d, std::size_t channels, Axis axis, Get get) {
    const auto [a0, a1] = plane_axes(axis);
    const auto ax = static_cast<std::size_t>(axis);
    std::vector<Image2D> out;
    out.reserve(d[ax]);
    for (std::size_t s = 0; s < d[ax]; ++s) {
        Image2D img(d[a0], d[a1], channels);
        img.slice_index = s;
        Index3 p{};
        p[ax] = s;
        for (std::size_t i = 0; i < img.h; ++i)
            for (std::size_t j = 0; j < img.w; ++j) {
                p[a0] = i;
                p[a1] = j;
                const std::size_t v = d.index(p);
                for (std::size_t c = 0; c < channels; ++c) img.at(i, j, c) = get(v, c);
            }
        out.push_back(std::move(img));
    }
    return out;
}

/// Reassembles slices into voxel-major values; returns dims and data.
inline std::pair<Dims, std::vector<double>> restack_generic(const std::vector<Image2D>& slices, Axis axis) {
    if (slices.empty()) throw ShapeError("restack: need at least one slice");
    const auto& first = slices.front();
    for (std::size_t k = 0; k < slices.size(); ++k) {
        const auto& s = slices[k];
        if (s.h != first.h || s.w != first.w || s.channels != first.channels)
            throw ShapeError("restack: slice " + std::to_string(k) + " has dims " + std::to_string(s.h) + "x" +
                             std::to_string(s.w) + "x" + std::to_string(s.channels) + ", expected " +
                             std::to_string(first.h) + "x" + std::to_string(first.w) + "x" +
                             std::to_string(first.channels));
        if (s.data.size() != s.h * s.w * s.channels)
            throw ShapeError("restack: slice " + std::to_string(k) + " data length mismatch");
    }
    const auto [a0, a1] = plane_axes(axis);
    const auto ax = static_cast<std::size_t>(axis);
    std::size_t ext[3];
    ext[ax] = slices.size();
    ext[a0] = first.h;
    ext[a1] = first.w;
    const Dims d{ext[0], ext[1], ext[2]};
    const std::size_t C = first.channels;
    std::vector<double> data(d.size() * C);
    for (std::size_t s = 0; s < slices.size(); ++s) {
        Index3 p{};
        p[ax] = s;
        for (std::size_t i = 0; i < first.h; ++i)
            for (std::size_t j = 0; j < first.w; ++j) {
                p[a0] = i;
                p[a1] = j;
                const std::size_t v = d.index(p);
                for (std::size_t c = 0; c < C; ++c) data[v * C + c] = slices[s].at(i, j, c);
            }
    }
    return {d, std::move(data)};
}

/// Source coordinate under the align-corners-false convention.
inline double source_coord(std::size_t dst, std::size_t in, std::size_t out) {
    return (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
}

}  // namespace detail

/// Min-max rescaling to [0, 1]. A constant volume maps to zeros and sets `degenerate`.
inline Volume3D normalize_intensity(const Volume3D& vol, bool* degenerate = nullptr) {
    const auto data = vol.data();
    const auto [lo_it, hi_it] = std::minmax_element(data.begin(), data.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<double> out(data.size(), 0.0);
    const bool constant = !(hi > lo);
    if (degenerate != nullptr) *degenerate = constant;
    if (constant) {
        log::warn("normalize_intensity: constant volume, returning zeros");
    } else {
        const double range = hi - lo;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp((data[i] - lo) / range, 0.0, 1.0);
    }
    return Volume3D(vol.grid(), std::move(out));
}

inline std::vector<Image2D> slice_stack(const Volume3D& vol, Axis axis) {
    return detail::slice_generic(vol.dims(), 1, axis, [&](std::size_t v, std::size_t) { return vol[v]; });
}

inline std::vector<Image2D> slice_stack(const LabelVolume& vol, Axis axis) {
    return detail::slice_generic(vol.dims(), 1, axis,
                                 [&](std::size_t v, std::size_t) { return static_cast<double>(vol[v]); });
}

inline std::vector<Image2D> slice_stack(const ProbVolume& vol, Axis axis) {
    return detail::slice_generic(vol.dims(), vol.num_labels(), axis, [&](std::size_t v, std::size_t c) {
        return vol.prob(v, static_cast<unsigned>(c));
    });
}

namespace detail {
inline Grid restacked_grid(const Dims& d, const Grid& like) {
    Grid g = like;
    g.dims = d;
    g.validate();
    return g;
}
}  // namespace detail

/// Inverse of slice_stack for intensity slices. `like` supplies spacing and orientation.
inline Volume3D restack_volume(const std::vector<Image2D>& slices, Axis axis, const Grid& like) {
    auto [d, data] = detail::restack_generic(slices, axis);
    if (slices.front().channels != 1) throw ShapeError("restack_volume: slices must have one channel");
    return Volume3D(detail::restacked_grid(d, like), std::move(data));
}

inline Volume3D restack_volume(const std::vector<Image2D>& slices, Axis axis, Spacing spacing) {
    return restack_volume(slices, axis, Grid{{1, 1, 1}, spacing, {}});
}

inline LabelVolume restack_labels(const std::vector<Image2D>& slices, Axis axis, const Grid& like,
                                  unsigned num_labels = 2) {
    auto [d, data] = detail::restack_generic(slices, axis);
    if (slices.front().channels != 1) throw ShapeError("restack_labels: slices must have one channel");
    std::vector<std::uint8_t> labels(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double v = data[i];
        if (!(v >= 0.0) || std::floor(v) != v || v >= num_labels)
            throw TypeError("restack_labels: invalid label value " + std::to_string(v));
        labels[i] = static_cast<std::uint8_t>(v);
    }
    return LabelVolume(detail::restacked_grid(d, like), std::move(labels), num_labels);
}

/// Reassembles probability slices, renormalizing each voxel onto the simplex.
inline ProbVolume restack_probs(const std::vector<Image2D>& slices, Axis axis, const Grid& like) {
    auto [d, data] = detail::restack_generic(slices, axis);
    const auto L = static_cast<unsigned>(slices.front().channels);
    renormalize_simplex(data, L);
    return ProbVolume(detail::restacked_grid(d, like), L, std::move(data));
}

/// Bilinear resampling, align-corners-false; each channel is interpolated independently.
/// Output stays within the extrema of the four contributing inputs.
inline Image2D resize_bilinear(const Image2D& img, std::size_t th, std::size_t tw) {
    if (th == 0 || tw == 0) throw ShapeError("resize_bilinear: target dims must be >= 1");
    if (img.h == 0 || img.w == 0) throw ShapeError("resize_bilinear: empty input");
    Image2D out(th, tw, img.channels);
    out.slice_index = img.slice_index;
    const auto clampc = [](double v, std::size_t n) { return std::clamp(v, 0.0, static_cast<double>(n - 1)); };
    for (std::size_t i = 0; i < th; ++i) {
        const double si = clampc(detail::source_coord(i, img.h, th), img.h);
        const auto i0 = static_cast<std::size_t>(std::floor(si));
        const std::size_t i1 = std::min(i0 + 1, img.h - 1);
        const double ti = si - static_cast<double>(i0);
        for (std::size_t j = 0; j < tw; ++j) {
            const double sj = clampc(detail::source_coord(j, img.w, tw), img.w);
            const auto j0 = static_cast<std::size_t>(std::floor(sj));
            const std::size_t j1 = std::min(j0 + 1, img.w - 1);
            const double tj = sj - static_cast<double>(j0);
            for (std::size_t c = 0; c < img.channels; ++c) {
                const double a = img.at(i0, j0, c), b = img.at(i0, j1, c);
                const double e = img.at(i1, j0, c), f = img.at(i1, j1, c);
                const double top = a + tj * (b - a);
                const double bot = e + tj * (f - e);
                const double v = top + ti * (bot - top);
                const double lo = std::min({a, b, e, f}), hi = std::max({a, b, e, f});
                out.at(i, j, c) = std::clamp(v, lo, hi);
            }
        }
    }
    return out;
}

/// Nearest-neighbour resampling on the same grid as resize_bilinear (never introduces new values).
inline Image2D resize_nearest(const Image2D& img, std::size_t th, std::size_t tw) {
    if (th == 0 || tw == 0) throw ShapeError("resize_nearest: target dims must be >= 1");
    if (img.h == 0 || img.w == 0) throw ShapeError("resize_nearest: empty input");
    Image2D out(th, tw, img.channels);
    out.slice_index = img.slice_index;
    const auto pick = [](std::size_t dst, std::size_t in, std::size_t n_out) {
        const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(n_out);
        return std::min(static_cast<std::size_t>(std::floor(s)), in - 1);
    };
    for (std::size_t i = 0; i < th; ++i) {
        const std::size_t si = pick(i, img.h, th);
        for (std::size_t j = 0; j < tw; ++j) {
            const std::size_t sj = pick(j, img.w, tw);
            for (std::size_t c = 0; c < img.channels; ++c) out.at(i, j, c) = img.at(si, sj, c);
        }
    }
    return out;
}

/// Smallest multiple of 2^depth that is >= n.
constexpr std::size_t pooled_extent(std::size_t n, unsigned depth) {
    const std::size_t m = std::size_t{1} << depth;
    return ((n + m - 1) / m) * m;
}

}  // namespace bseg
