#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bseg/core/error.hpp"
#include "bseg/core/log.hpp"
#include "bseg/volume/volume.hpp"

namespace bseg::metrics {

struct ConfusionCounts {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

    std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

namespace detail {
inline void require_pair(const LabelVolume& m, const LabelVolume& r, const char* what) {
    require_binary(m, what);
    require_binary(r, what);
    if (m.dims() != r.dims())
        throw ShapeError(std::string(what) + ": dims differ (" + to_string(m.dims()) + " vs " + to_string(r.dims()) + ")");
}
}  // namespace detail

/// Counts for a predicted mask M against a reference R (label 1 = foreground).
inline ConfusionCounts confusion(const LabelVolume& m, const LabelVolume& r) {
    detail::require_pair(m, r, "confusion");
    ConfusionCounts c;
    const auto a = m.data(), b = r.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool in_m = a[i] == 1, in_r = b[i] == 1;
        c.tp += in_m && in_r;
        c.tn += !in_m && !in_r;
        c.fp += in_m && !in_r;
        c.fn += !in_m && in_r;
    }
    return c;
}

/// 2TP / (2TP + FP + FN). Two empty masks agree perfectly (1, with a warning).
inline double dice(const ConfusionCounts& c) {
    const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) {
        log::warn("dice: both masks are empty; defined as 1");
        return 1.0;
    }
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double sensitivity(const ConfusionCounts& c) {
    if (c.tp + c.fn == 0) throw UndefinedResultError("sensitivity undefined: reference mask is empty");
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline double specificity(const ConfusionCounts& c) {
    if (c.tn + c.fp == 0) throw UndefinedResultError("specificity undefined: reference background is empty");
    return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

inline double dice(const LabelVolume& m, const LabelVolume& r) { return dice(confusion(m, r)); }

struct ErrorMaps {
    LabelVolume false_positive;
    LabelVolume false_negative;
    LabelVolume absolute;
};

/// FP = M and not R, FN = R and not M, absolute = FP or FN.
inline ErrorMaps error_maps(const LabelVolume& m, const LabelVolume& r) {
    detail::require_pair(m, r, "error_maps");
    const std::size_t n = m.size();
    std::vector<std::uint8_t> fp(n), fn(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        fp[i] = m[i] == 1 && r[i] == 0;
        fn[i] = m[i] == 0 && r[i] == 1;
        ab[i] = fp[i] | fn[i];
    }
    return {LabelVolume(m.grid(), std::move(fp), 2), LabelVolume(m.grid(), std::move(fn), 2),
            LabelVolume(m.grid(), std::move(ab), 2)};
}

/// Label values as reals, for averaging maps.
inline Volume3D as_real(const LabelVolume& m) {
    return Volume3D(m.grid(), std::vector<double>(m.data().begin(), m.data().end()));
}

}  // namespace bseg::metrics
