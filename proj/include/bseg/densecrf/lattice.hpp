#pragma once

// Permutohedral lattice for approximate Gaussian filtering in a d-dimensional feature space
// (splat onto the enclosing simplex vertices, blur along the d+1 lattice axes, slice back).

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "bseg/core/error.hpp"

namespace bseg::crf {

inline constexpr std::size_t kMaxFeatureDim = 8;

/// Row-major point features: n points of `dim` values each.
struct PointFeatures {
    std::size_t n = 0, dim = 0;
    std::vector<double> data;

    PointFeatures() = default;
    PointFeatures(std::size_t n_, std::size_t dim_) : n(n_), dim(dim_), data(n_ * dim_, 0.0) {}
    PointFeatures(std::size_t n_, std::size_t dim_, std::vector<double> d) : n(n_), dim(dim_), data(std::move(d)) {
        if (data.size() != n * dim) throw ShapeError("PointFeatures: data length " + std::to_string(data.size()) +
                                                     " != " + std::to_string(n) + "x" + std::to_string(dim));
    }
    const double* point(std::size_t i) const { return data.data() + i * dim; }
    double* point(std::size_t i) { return data.data() + i * dim; }
};

class PermutohedralLattice {
public:
    /// closure < 0 picks a depth by dimension (the closed set grows roughly as 5^(d+1) per point at depth 2).
    explicit PermutohedralLattice(const PointFeatures& f, unsigned refine = 2, int closure = -1)
        : n_(f.n), d_(f.dim), refine_(refine),
          closure_(closure >= 0 ? static_cast<unsigned>(closure) : f.dim <= 4 ? 2u : f.dim <= 6 ? 1u : 0u) {
        if (refine != 1 && refine != 2 && refine != 4 && refine != 5)
            throw ArgumentError("permutohedral lattice: refinement must be 1, 2, 4 or 5");
        if (d_ == 0) throw UnsupportedError("permutohedral lattice: feature dimension must be >= 1");
        if (d_ > kMaxFeatureDim)
            throw UnsupportedError("permutohedral lattice: unsupported feature dimension " + std::to_string(d_) +
                                   " (max " + std::to_string(kMaxFeatureDim) + ")");
        build(f);
    }

    std::size_t num_points() const noexcept { return n_; }
    std::size_t dim() const noexcept { return d_; }
    std::size_t num_vertices() const noexcept { return m_; }

    /// Approximates out_i = sum_j exp(-|f_i - f_j|^2 / 2) v_j (self term included). `in` and `out` are
    /// point-major with `channels` values per point.
    void filter(const double* in, double* out, std::size_t channels) const {
        const std::size_t d1 = d_ + 1;
        // slot 0 stays zero and stands in for missing blur neighbours
        std::vector<double> values((m_ + 1) * channels, 0.0), next((m_ + 1) * channels, 0.0);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t r = 0; r < d1; ++r) {
                const std::size_t o = (offset_[i * d1 + r] + 1) * channels;
                const double w = bary_[i * d1 + r];
                for (std::size_t c = 0; c < channels; ++c) values[o + c] += w * in[i * channels + c];
            }
        const std::size_t passes = (4 * refine_ * refine_ - 1) / 3;
        for (std::size_t j = 0; j < d1; ++j) {
            const auto* nb = &blur_[j * m_];
            for (std::size_t pass = 0; pass < passes; ++pass) {
                for (std::size_t v = 0; v < m_; ++v) {
                    const std::size_t a = (nb[v].n1 + 1) * channels, b = (nb[v].n2 + 1) * channels;
                    const std::size_t o = (v + 1) * channels;
                    for (std::size_t c = 0; c < channels; ++c)
                        next[o + c] = 0.5 * values[o + c] + 0.25 * (values[a + c] + values[b + c]);
                }
                std::swap(values, next);
            }
        }
        const double alpha = mass_scale();
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t c = 0; c < channels; ++c) out[i * channels + c] = 0.0;
            for (std::size_t r = 0; r < d1; ++r) {
                const std::size_t o = (offset_[i * d1 + r] + 1) * channels;
                const double w = bary_[i * d1 + r] * alpha;
                for (std::size_t c = 0; c < channels; ++c) out[i * channels + c] += w * values[o + c];
            }
        }
    }

    /// Ratio between the Gaussian's mass and the lattice kernel's mass (splat and slice conserve mass,
    /// each blur pass has unit gain, so only the feature-space volume per lattice vertex remains).
    double mass_scale() const {
        const double d = static_cast<double>(d_), k = static_cast<double>(refine_);
        const double cell = std::pow(1.5, d / 2.0) / std::sqrt(d + 1.0);
        return std::pow(2.0 * std::numbers::pi, d / 2.0) * std::pow(k, d) / cell;
    }

private:
    using Key = std::array<std::int32_t, kMaxFeatureDim>;
    struct KeyHash {
        std::size_t operator()(const Key& k) const noexcept {
            std::uint64_t h = 1469598103934665603ull;
            for (std::int32_t v : k) {
                h ^= static_cast<std::uint32_t>(v);
                h *= 1099511628211ull;
            }
            return static_cast<std::size_t>(h);
        }
    };
    struct Neighbours {
        std::int64_t n1 = -1, n2 = -1;
    };

    void build(const PointFeatures& f) {
        const std::size_t d = d_, d1 = d + 1;
        const double dd = static_cast<double>(d);
        std::vector<double> scale(d);
        const double inv_std = std::sqrt(2.0 / 3.0) * (dd + 1.0);
        for (std::size_t i = 0; i < d; ++i)
            scale[i] = inv_std / std::sqrt((static_cast<double>(i) + 1.0) * (static_cast<double>(i) + 2.0));

        std::vector<std::int32_t> canonical(d1 * d1);
        for (std::size_t i = 0; i <= d; ++i) {
            for (std::size_t j = 0; j <= d - i; ++j) canonical[i * d1 + j] = static_cast<std::int32_t>(i);
            for (std::size_t j = d - i + 1; j <= d; ++j)
                canonical[i * d1 + j] = static_cast<std::int32_t>(i) - static_cast<std::int32_t>(d1);
        }

        std::unordered_map<Key, std::int64_t, KeyHash> table;
        table.reserve(n_ * d1);
        std::vector<Key> keys;
        offset_.resize(n_ * d1);
        bary_.resize(n_ * d1);

        std::vector<double> elevated(d1), bary(d + 2);
        std::vector<std::int32_t> rem0(d1), rank(d1);
        for (std::size_t k = 0; k < n_; ++k) {
            const double* p = f.point(k);
            double sm = 0.0;
            for (std::size_t i = d; i >= 1; --i) {
                const double cf = p[i - 1] * scale[i - 1] * static_cast<double>(refine_);
                elevated[i] = sm - static_cast<double>(i) * cf;
                sm += cf;
            }
            elevated[0] = sm;

            std::int32_t sum = 0;
            for (std::size_t i = 0; i <= d; ++i) {
                const double v = elevated[i] / (dd + 1.0);
                const double up = std::ceil(v) * (dd + 1.0), down = std::floor(v) * (dd + 1.0);
                rem0[i] = static_cast<std::int32_t>(up - elevated[i] < elevated[i] - down ? up : down);
                sum += rem0[i];
            }
            sum /= static_cast<std::int32_t>(d1);

            std::fill(rank.begin(), rank.end(), 0);
            for (std::size_t i = 0; i < d; ++i) {
                const double di = elevated[i] - rem0[i];
                for (std::size_t j = i + 1; j <= d; ++j) {
                    if (di < elevated[j] - rem0[j])
                        ++rank[i];
                    else
                        ++rank[j];
                }
            }
            for (std::size_t i = 0; i <= d; ++i) {
                rank[i] += sum;
                if (rank[i] < 0) {
                    rank[i] += static_cast<std::int32_t>(d1);
                    rem0[i] += static_cast<std::int32_t>(d1);
                } else if (rank[i] > static_cast<std::int32_t>(d)) {
                    rank[i] -= static_cast<std::int32_t>(d1);
                    rem0[i] -= static_cast<std::int32_t>(d1);
                }
            }

            std::fill(bary.begin(), bary.end(), 0.0);
            for (std::size_t i = 0; i <= d; ++i) {
                const double v = (elevated[i] - rem0[i]) / (dd + 1.0);
                bary[d - static_cast<std::size_t>(rank[i])] += v;
                bary[d - static_cast<std::size_t>(rank[i]) + 1] -= v;
            }
            bary[0] += 1.0 + bary[d + 1];

            for (std::size_t r = 0; r <= d; ++r) {
                Key key{};
                for (std::size_t i = 0; i < d; ++i) key[i] = rem0[i] + canonical[r * d1 + static_cast<std::size_t>(rank[i])];
                auto [it, inserted] = table.try_emplace(key, static_cast<std::int64_t>(keys.size()));
                if (inserted) keys.push_back(key);
                offset_[k * d1 + r] = it->second;
                bary_[k * d1 + r] = bary[r];
            }
        }
        const auto neighbour = [d](const Key& key, std::size_t j, int sign) {
            Key n{};
            for (std::size_t k = 0; k < d; ++k) n[k] = key[k] - sign;
            if (j < d) n[j] = key[j] + sign * static_cast<std::int32_t>(d);
            return n;
        };
        // add every vertex up to `closure_` blur steps away, direction by direction, so values can travel
        // through unoccupied parts of the lattice
        for (unsigned step = 0; step < closure_; ++step) {
            for (std::size_t j = 0; j <= d; ++j) {
                const std::size_t count = keys.size();
                for (std::size_t v = 0; v < count; ++v)
                    for (int sign : {1, -1}) {
                        const Key n = neighbour(keys[v], j, sign);
                        if (table.try_emplace(n, static_cast<std::int64_t>(keys.size())).second) keys.push_back(n);
                    }
            }
        }
        m_ = keys.size();

        blur_.resize(d1 * m_);
        for (std::size_t j = 0; j <= d; ++j)
            for (std::size_t v = 0; v < m_; ++v) {
                const auto a = table.find(neighbour(keys[v], j, 1)), b = table.find(neighbour(keys[v], j, -1));
                blur_[j * m_ + v] = {a == table.end() ? -1 : a->second, b == table.end() ? -1 : b->second};
            }
    }

    std::size_t n_, d_, m_ = 0;
    unsigned refine_;
    unsigned closure_;
    std::vector<std::int64_t> offset_;
    std::vector<double> bary_;
    std::vector<Neighbours> blur_;
};

}  // namespace bseg::crf
