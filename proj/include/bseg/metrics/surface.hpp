#pragma once

// Surface distances between binary masks. Boundaries are face-exposed voxels (6-connectivity, grid
// edge counts as outside); distances are between voxel centres scaled per axis by the spacing.
//
// Squared distances are always accumulated as  z-term + (y-term + x-term)  so that the exhaustive
// scan and the separable distance transform produce bit-identical values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "bseg/core/error.hpp"
#include "bseg/metrics/overlap.hpp"
#include "bseg/volume/volume.hpp"

namespace bseg::metrics {

/// Linear indices of boundary voxels, ascending.
inline std::vector<std::size_t> extract_boundary(const LabelVolume& mask) {
    require_binary(mask, "extract_boundary");
    const Dims& d = mask.dims();
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (mask[i] != 1) continue;
        const auto p = d.unflatten(i);
        const long x = static_cast<long>(p[0]), y = static_cast<long>(p[1]), z = static_cast<long>(p[2]);
        const long nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z}, {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
        for (const auto& q : nb) {
            if (!d.contains(q[0], q[1], q[2]) ||
                mask.at(static_cast<std::size_t>(q[0]), static_cast<std::size_t>(q[1]), static_cast<std::size_t>(q[2])) != 1) {
                out.push_back(i);
                break;
            }
        }
    }
    return out;
}

/// Squared physical distance between voxel centres, fixed accumulation order.
inline double squared_distance(const Index3& a, const Index3& b, const Spacing& s) {
    const auto sq = [](std::size_t u, std::size_t v) {
        const double d = static_cast<double>(u > v ? u - v : v - u);
        return d * d;
    };
    double acc = s.sx * s.sx * sq(a[0], b[0]);
    acc = s.sy * s.sy * sq(a[1], b[1]) + acc;
    acc = s.sz * s.sz * sq(a[2], b[2]) + acc;
    return acc;
}

namespace detail {

/// One pass of the lower-envelope distance transform along a line (Felzenszwalb & Huttenlocher).
inline void edt_line(const double* f, double* out, std::size_t n, double w, std::vector<std::size_t>& v,
                     std::vector<double>& z) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    v.resize(n);
    z.resize(n + 1);
    std::size_t k = 0;
    bool any = false;
    for (std::size_t q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        if (!any) {
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            any = true;
            continue;
        }
        const double fq = f[q] / w + static_cast<double>(q) * static_cast<double>(q);
        double s = 0.0;
        while (true) {
            const std::size_t p = v[k];
            const double fp = f[p] / w + static_cast<double>(p) * static_cast<double>(p);
            s = (fq - fp) / (2.0 * (static_cast<double>(q) - static_cast<double>(p)));
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        if (s <= z[k]) {  // k == 0 and the new parabola dominates everywhere
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    if (!any) {
        std::fill(out, out + n, inf);
        return;
    }
    std::size_t j = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[j + 1] < static_cast<double>(q)) ++j;
        // the envelope selects the candidate; re-evaluate neighbours so near-ties resolve to the true min
        double best = inf;
        for (std::size_t jj = (j > 0 ? j - 1 : 0); jj <= std::min(j + 1, k); ++jj) {
            const double d = static_cast<double>(q > v[jj] ? q - v[jj] : v[jj] - q);
            best = std::min(best, w * (d * d) + f[v[jj]]);
        }
        out[q] = best;
    }
}

}  // namespace detail

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest voxel in `targets`.
inline std::vector<double> squared_distance_transform(const Dims& d, const Spacing& s,
                                                      const std::vector<std::size_t>& targets) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> f(d.size(), inf);
    for (std::size_t i : targets) f[i] = 0.0;
    std::vector<double> line_in, line_out, z;
    std::vector<std::size_t> v;
    const double w[3] = {s.sx * s.sx, s.sy * s.sy, s.sz * s.sz};
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const std::size_t n = d[axis];
        line_in.resize(n);
        line_out.resize(n);
        const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d.nx : d.nx * d.ny;
        for (std::size_t base = 0; base < d.size(); ++base) {
            if ((base / stride) % n != 0) continue;  // first voxel of each line along `axis`
            for (std::size_t q = 0; q < n; ++q) line_in[q] = f[base + q * stride];
            detail::edt_line(line_in.data(), line_out.data(), n, w[axis], v, z);
            for (std::size_t q = 0; q < n; ++q) f[base + q * stride] = line_out[q];
        }
    }
    return f;
}

enum class SurfaceMethod { automatic, exhaustive, distance_transform };

struct SurfaceDistances {
    double hausdorff = 0.0;  ///< mm
    double assd = 0.0;       ///< mm
    std::size_t boundary_m = 0, boundary_r = 0;
};

/// Directed nearest distances from each voxel in `from` to the set `to`, in `from` order.
inline std::vector<double> directed_distances(const Dims& d, const Spacing& s, const std::vector<std::size_t>& from,
                                              const std::vector<std::size_t>& to, SurfaceMethod method) {
    std::vector<double> out(from.size());
    if (method == SurfaceMethod::exhaustive) {
        std::vector<Index3> tp(to.size());
        for (std::size_t k = 0; k < to.size(); ++k) tp[k] = d.unflatten(to[k]);
        for (std::size_t k = 0; k < from.size(); ++k) {
            const Index3 a = d.unflatten(from[k]);
            double best = std::numeric_limits<double>::infinity();
            for (const auto& b : tp) best = std::min(best, squared_distance(a, b, s));
            out[k] = std::sqrt(best);
        }
    } else {
        const auto dt = squared_distance_transform(d, s, to);
        for (std::size_t k = 0; k < from.size(); ++k) out[k] = std::sqrt(dt[from[k]]);
    }
    return out;
}

/// Hausdorff distance and average symmetric surface distance (mm). Either mask empty is an error.
inline SurfaceDistances surface_distances(const LabelVolume& m, const LabelVolume& r,
                                          SurfaceMethod method = SurfaceMethod::automatic) {
    detail::require_pair(m, r, "surface_distances");
    const auto bm = extract_boundary(m), br = extract_boundary(r);
    if (bm.empty() || br.empty())
        throw UndefinedResultError("undefined surface distance: " + std::string(bm.empty() ? "M" : "R") +
                                   " is an empty mask");
    if (method == SurfaceMethod::automatic)
        method = static_cast<double>(bm.size()) * static_cast<double>(br.size()) <= 4.0e6
                     ? SurfaceMethod::exhaustive
                     : SurfaceMethod::distance_transform;
    const Dims& d = m.dims();
    const Spacing& s = m.spacing();
    const auto dm = directed_distances(d, s, bm, br, method);
    const auto dr = directed_distances(d, s, br, bm, method);
    SurfaceDistances out;
    out.boundary_m = bm.size();
    out.boundary_r = br.size();
    double sum = 0.0, hd = 0.0;
    for (double v : dm) {
        sum += v;
        hd = std::max(hd, v);
    }
    for (double v : dr) {
        sum += v;
        hd = std::max(hd, v);
    }
    out.hausdorff = hd;
    out.assd = sum / static_cast<double>(bm.size() + br.size());
    return out;
}

inline double hausdorff(const LabelVolume& m, const LabelVolume& r) { return surface_distances(m, r).hausdorff; }
inline double assd(const LabelVolume& m, const LabelVolume& r) { return surface_distances(m, r).assd; }

}  // namespace bseg::metrics
