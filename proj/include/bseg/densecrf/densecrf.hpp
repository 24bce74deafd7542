#pragma once

// Fully connected CRF over a 3D volume with Gaussian appearance and smoothness kernels and Potts
// compatibility. Mean-field inference filters Q with either an exact O(N^2) sum or the
// permutohedral lattice.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bseg/core/error.hpp"
#include "bseg/densecrf/lattice.hpp"
#include "bseg/volume/volume.hpp"

namespace bseg::crf {

struct CrfParams {
    double w1 = 3.0;           ///< appearance weight
    double w2 = 1.0;           ///< smoothness weight
    double theta_alpha = 4.0;  ///< appearance spatial scale, voxels
    double theta_beta = 1.0;   ///< appearance intensity scale, normalized intensity units
    double theta_gamma = 4.0;  ///< smoothness spatial scale, voxels
    unsigned iterations = 5;
    double unary_floor = 1e-10;

    void validate() const {
        const auto pos = [](double v, const char* name) {
            if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("CrfParams: ") + name + " must be > 0");
        };
        pos(theta_alpha, "theta_alpha");
        pos(theta_beta, "theta_beta");
        pos(theta_gamma, "theta_gamma");
        if (!(w1 >= 0.0) || !std::isfinite(w1)) throw ConfigError("CrfParams: w1 must be >= 0");
        if (!(w2 >= 0.0) || !std::isfinite(w2)) throw ConfigError("CrfParams: w2 must be >= 0");
        if (!(unary_floor > 0.0 && unary_floor < 1.0)) throw ConfigError("CrfParams: unary_floor must be in (0, 1)");
    }
};

enum class FilterKind { fast, naive };

inline FilterKind parse_filter(const std::string& s) {
    if (s == "fast") return FilterKind::fast;
    if (s == "naive") return FilterKind::naive;
    throw ArgumentError("unknown filter '" + s + "' (expected fast or naive)");
}

/// Per-voxel, per-label energies, voxel-major.
class UnaryField {
public:
    UnaryField() = default;
    UnaryField(Grid grid, unsigned num_labels, std::vector<double> energy)
        : grid_(std::move(grid)), num_labels_(num_labels), energy_(std::move(energy)) {
        grid_.validate();
        if (num_labels_ < 2) throw ConfigError("UnaryField: num_labels must be >= 2");
        if (energy_.size() != grid_.size() * num_labels_) throw ShapeError("UnaryField: data length mismatch");
        for (double e : energy_)
            if (!(e >= 0.0) || !std::isfinite(e)) throw NumericError("UnaryField: energies must be finite and >= 0");
    }

    const Grid& grid() const noexcept { return grid_; }
    const Dims& dims() const noexcept { return grid_.dims; }
    std::size_t voxels() const noexcept { return grid_.size(); }
    unsigned num_labels() const noexcept { return num_labels_; }
    double operator()(std::size_t voxel, unsigned label) const noexcept { return energy_[voxel * num_labels_ + label]; }
    std::span<const double> data() const noexcept { return energy_; }

private:
    Grid grid_;
    unsigned num_labels_ = 2;
    std::vector<double> energy_;
};

/// u_i(l) = -ln(max(p_i(l), floor)).
inline UnaryField unary_from_prob(const ProbVolume& probs, double floor = 1e-10) {
    if (!(floor > 0.0)) throw ConfigError("unary_from_prob: floor must be > 0");
    std::vector<double> e(probs.data().size());
    for (std::size_t k = 0; k < e.size(); ++k) e[k] = -std::log(std::max(probs.data()[k], floor));
    // -ln(1) is -0.0; keep energies non-negative in the sign bit as well
    for (auto& v : e) v = v == 0.0 ? 0.0 : v;
    return UnaryField(probs.grid(), probs.num_labels(), std::move(e));
}

/// Scaled per-voxel features: appearance (x, y, z)/theta_alpha + I/theta_beta, smoothness (x, y, z)/theta_gamma.
/// Positions are voxel indices.
struct FeatureSet {
    PointFeatures appearance;
    PointFeatures smoothness;

    std::size_t size() const noexcept { return smoothness.n; }
};

inline FeatureSet make_features(const Volume3D& image, const CrfParams& p) {
    p.validate();
    const Dims& d = image.dims();
    FeatureSet f{PointFeatures(d.size(), 4), PointFeatures(d.size(), 3)};
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto q = d.unflatten(i);
        double* a = f.appearance.point(i);
        double* s = f.smoothness.point(i);
        for (std::size_t k = 0; k < 3; ++k) {
            a[k] = static_cast<double>(q[k]) / p.theta_alpha;
            s[k] = static_cast<double>(q[k]) / p.theta_gamma;
        }
        a[3] = image[i] / p.theta_beta;
    }
    return f;
}

inline constexpr std::size_t kNaiveCap = 20000;

namespace detail {
inline double sq_dist(const double* a, const double* b, std::size_t dim) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
        const double t = a[k] - b[k];
        s += t * t;
    }
    return s;
}
}  // namespace detail

/// out_i = sum_{j != i} exp(-|f_i - f_j|^2 / 2) v_j, exactly. `values` is point-major with `channels` per point.
inline std::vector<double> gaussian_filter_naive(std::span<const double> values, std::size_t channels,
                                                 const PointFeatures& f, std::size_t cap = kNaiveCap) {
    if (values.size() != f.n * channels) throw ShapeError("gaussian_filter_naive: values/features length mismatch");
    if (f.n > cap)
        throw CapacityError("gaussian_filter_naive: " + std::to_string(f.n) + " points exceeds the cap of " +
                            std::to_string(cap) + "; use the fast (lattice) filter");
    std::vector<double> out(values.size(), 0.0);
    for (std::size_t i = 0; i < f.n; ++i)
        for (std::size_t j = i + 1; j < f.n; ++j) {
            const double w = std::exp(-0.5 * detail::sq_dist(f.point(i), f.point(j), f.dim));
            for (std::size_t c = 0; c < channels; ++c) {
                out[i * channels + c] += w * values[j * channels + c];
                out[j * channels + c] += w * values[i * channels + c];
            }
        }
    return out;
}

/// Lattice approximation of gaussian_filter_naive; the self contribution k(0) v_i = v_i is subtracted.
inline std::vector<double> gaussian_filter_fast(std::span<const double> values, std::size_t channels,
                                                const PermutohedralLattice& lattice) {
    if (values.size() != lattice.num_points() * channels)
        throw ShapeError("gaussian_filter_fast: values/features length mismatch");
    std::vector<double> out(values.size());
    lattice.filter(values.data(), out.data(), channels);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] -= values[k];
    return out;
}

inline std::vector<double> gaussian_filter_fast(std::span<const double> values, std::size_t channels,
                                                const PointFeatures& f) {
    return gaussian_filter_fast(values, channels, PermutohedralLattice(f));
}

/// Weighted message operator m = w1 * K_app Q + w2 * K_smooth Q with each kernel symmetrically degree
/// normalized, D^-1/2 K D^-1/2 where D = K 1 includes the self term, and the self contribution removed
/// afterwards. Lattices and degrees are computed once per feature set.
class MessageFilter {
public:
    MessageFilter(const FeatureSet& f, const CrfParams& p, FilterKind kind, std::size_t naive_cap = kNaiveCap)
        : w1_(p.w1), w2_(p.w2) {
        if (f.appearance.n != f.smoothness.n) throw ShapeError("MessageFilter: feature sets differ in size");
        if (kind == FilterKind::naive && f.size() > naive_cap)
            throw CapacityError("naive CRF filter: " + std::to_string(f.size()) + " voxels exceeds the cap of " +
                                std::to_string(naive_cap) + "; use --filter fast");
        if (w1_ > 0.0) app_.emplace(f.appearance, kind, naive_cap);
        if (w2_ > 0.0) smooth_.emplace(f.smoothness, kind, naive_cap);
    }

    std::vector<double> operator()(std::span<const double> q, std::size_t channels) const {
        std::vector<double> m(q.size(), 0.0);
        if (app_) app_->accumulate(q, channels, w1_, m);
        if (smooth_) smooth_->accumulate(q, channels, w2_, m);
        return m;
    }

private:
    class Kernel {
    public:
        Kernel(const PointFeatures& f, FilterKind kind, std::size_t cap) : f_(&f), kind_(kind), cap_(cap) {
            if (kind == FilterKind::fast) lattice_.emplace(f);
            const std::vector<double> ones(f.n, 1.0);
            auto deg = raw(ones, 1);
            norm_.resize(f.n);
            for (std::size_t i = 0; i < f.n; ++i) norm_[i] = 1.0 / std::sqrt(std::max(deg[i] + 1.0, 1.0));
        }

        void accumulate(std::span<const double> q, std::size_t channels, double w, std::vector<double>& m) const {
            std::vector<double> scaled(q.size());
            for (std::size_t i = 0; i < f_->n; ++i)
                for (std::size_t c = 0; c < channels; ++c) scaled[i * channels + c] = norm_[i] * q[i * channels + c];
            const auto k = raw(scaled, channels);
            for (std::size_t i = 0; i < f_->n; ++i)
                for (std::size_t c = 0; c < channels; ++c) m[i * channels + c] += w * norm_[i] * k[i * channels + c];
        }

    private:
        // self-excluded kernel sum
        std::vector<double> raw(std::span<const double> v, std::size_t channels) const {
            return kind_ == FilterKind::fast ? gaussian_filter_fast(v, channels, *lattice_)
                                             : gaussian_filter_naive(v, channels, *f_, cap_);
        }

        const PointFeatures* f_;
        FilterKind kind_;
        std::size_t cap_;
        std::optional<PermutohedralLattice> lattice_;
        std::vector<double> norm_;
    };

    double w1_, w2_;
    std::optional<Kernel> app_, smooth_;
};

namespace detail {

/// Q'_i(l) proportional to exp(-u_i(l) - sum_{l' != l} m_i(l')).
inline std::vector<double> potts_update(const UnaryField& u, const std::vector<double>& m) {
    const unsigned L = u.num_labels();
    std::vector<double> q(m.size());
    std::vector<double> logit(L);
    for (std::size_t i = 0; i < u.voxels(); ++i) {
        double total = 0.0;
        for (unsigned l = 0; l < L; ++l) total += m[i * L + l];
        double hi = -std::numeric_limits<double>::infinity();
        for (unsigned l = 0; l < L; ++l) {
            logit[l] = -u(i, l) - (total - m[i * L + l]);
            hi = std::max(hi, logit[l]);
        }
        double s = 0.0;
        for (unsigned l = 0; l < L; ++l) {
            logit[l] = std::exp(logit[l] - hi);
            s += logit[l];
        }
        for (unsigned l = 0; l < L; ++l) q[i * L + l] = logit[l] / s;
    }
    return q;
}

inline void require_aligned(const UnaryField& u, const FeatureSet& f, const char* what) {
    if (f.size() != u.voxels() || f.appearance.n != u.voxels())
        throw ShapeError(std::string(what) + ": features cover " + std::to_string(f.size()) + " voxels, unary " +
                         std::to_string(u.voxels()));
}

}  // namespace detail

/// One parallel mean-field update of every label channel from the same Q.
inline ProbVolume meanfield_step(const ProbVolume& q, const UnaryField& u, const MessageFilter& filter) {
    if (q.voxels() != u.voxels() || q.num_labels() != u.num_labels())
        throw ShapeError("meanfield_step: Q and unary differ in shape");
    const auto m = filter(q.data(), q.num_labels());
    return ProbVolume(q.grid(), q.num_labels(), detail::potts_update(u, m));
}

inline ProbVolume meanfield_step(const ProbVolume& q, const UnaryField& u, const FeatureSet& f, const CrfParams& p,
                                 FilterKind kind = FilterKind::fast) {
    detail::require_aligned(u, f, "meanfield_step");
    return meanfield_step(q, u, MessageFilter(f, p, kind));
}

struct CrfResult {
    ProbVolume probs;
    LabelVolume labels;
};

/// Runs `iterations` mean-field steps starting from the input probabilities. The image must be normalized
/// to [0, 1] and share the probability grid's dims.
inline CrfResult infer(const ProbVolume& probs, const Volume3D& image, const CrfParams& p,
                       FilterKind kind = FilterKind::fast) {
    p.validate();
    if (probs.dims() != image.dims())
        throw ShapeError("crf infer: probability dims " + to_string(probs.dims()) + " differ from image dims " +
                         to_string(image.dims()));
    for (double v : image.data())
        if (v < 0.0 || v > 1.0) throw ArgumentError("crf infer: image intensities must be normalized to [0, 1]");
    if (p.iterations == 0) return {probs, probs.argmax()};
    const auto u = unary_from_prob(probs, p.unary_floor);
    const auto f = make_features(image, p);
    const MessageFilter filter(f, p, kind);
    ProbVolume q = probs;
    for (unsigned it = 0; it < p.iterations; ++it) q = meanfield_step(q, u, filter);
    auto labels = q.argmax();
    return {std::move(q), std::move(labels)};
}

/// E(x) = sum_i u_i(x_i) + sum_{i<j} [x_i != x_j] (w1 k_app(i,j) + w2 k_smooth(i,j)), summed exactly.
inline double gibbs_energy(const LabelVolume& x, const UnaryField& u, const FeatureSet& f, const CrfParams& p,
                           std::size_t cap = kNaiveCap) {
    detail::require_aligned(u, f, "gibbs_energy");
    if (x.size() != u.voxels()) throw ShapeError("gibbs_energy: labeling and unary differ in size");
    if (x.num_labels() > u.num_labels()) throw TypeError("gibbs_energy: labeling has more labels than the unary");
    if (f.size() > cap)
        throw CapacityError("gibbs_energy: " + std::to_string(f.size()) + " voxels exceeds the cap of " +
                            std::to_string(cap));
    double unary = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) unary += u(i, x[i]);
    double pair = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = i + 1; j < x.size(); ++j) {
            if (x[i] == x[j]) continue;
            const double ka = std::exp(-0.5 * detail::sq_dist(f.appearance.point(i), f.appearance.point(j), 4));
            const double ks = std::exp(-0.5 * detail::sq_dist(f.smoothness.point(i), f.smoothness.point(j), 3));
            pair += p.w1 * ka + p.w2 * ks;
        }
    return unary + pair;
}

inline constexpr std::uint64_t kBruteForceStates = std::uint64_t{1} << 20;

/// Global minimizer of gibbs_energy by enumeration; ties go to the lexicographically smallest labeling
/// (voxel 0 most significant).
inline LabelVolume exact_map_bruteforce(const UnaryField& u, const FeatureSet& f, const CrfParams& p) {
    detail::require_aligned(u, f, "exact_map_bruteforce");
    const std::size_t n = u.voxels();
    const unsigned L = u.num_labels();
    double states = 1.0;
    for (std::size_t i = 0; i < n; ++i) states *= L;
    if (states > static_cast<double>(kBruteForceStates))
        throw CapacityError("exact_map_bruteforce: " + std::to_string(L) + "^" + std::to_string(n) + " = " +
                            std::to_string(states) + " labelings exceeds the limit of " +
                            std::to_string(kBruteForceStates));
    std::vector<double> w(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double ka = std::exp(-0.5 * detail::sq_dist(f.appearance.point(i), f.appearance.point(j), 4));
            const double ks = std::exp(-0.5 * detail::sq_dist(f.smoothness.point(i), f.smoothness.point(j), 3));
            w[i * n + j] = p.w1 * ka + p.w2 * ks;
        }
    std::vector<std::uint8_t> x(n, 0), best(n, 0);
    double best_e = std::numeric_limits<double>::infinity();
    const auto total = static_cast<std::uint64_t>(states);
    for (std::uint64_t s = 0; s < total; ++s) {
        std::uint64_t r = s;
        for (std::size_t k = n; k-- > 0;) {
            x[k] = static_cast<std::uint8_t>(r % L);
            r /= L;
        }
        double e = 0.0;
        for (std::size_t i = 0; i < n; ++i) e += u(i, x[i]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (x[i] != x[j]) e += w[i * n + j];
        if (s == 0 || e < best_e - 1e-12 * (1.0 + std::abs(best_e))) {
            best_e = e;
            best = x;
        }
    }
    return LabelVolume(u.grid(), std::move(best), L);
}

}  // namespace bseg::crf
