#pragma once

// Synthetic head phantoms: an ellipsoidal brain with an elongated anterior lobe, two eyes anterior to
// it, adipose shells behind the eyes and a skull shell. Everything is a pure function of the config.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bseg/core/error.hpp"
#include "bseg/core/seed.hpp"
#include "bseg/volume/volume.hpp"

namespace bseg::phantom {

struct Vec3 {
    double x = 0, y = 0, z = 0;
    double operator[](std::size_t a) const { return a == 0 ? x : a == 1 ? y : z; }
};

enum class Tissue : std::uint8_t { background = 0, skull, adipose, eye, brain };

struct Intensities {
    double background = 0.05;
    double skull = 0.3;
    double brain = 0.7;
    double eyes = 0.9;
    double adipose = 0.85;
};

/// Geometry is in voxel units; anterior is +y, superior is +z.
struct PhantomConfig {
    Dims dims{64, 64, 48};
    Spacing spacing{0.5, 0.5, 0.5};
    Vec3 brain_center{32.0, 28.0, 26.0};
    Vec3 brain_semi_axes{19.0, 19.0, 13.0};
    /// Narrow anterior lobe unioned into the brain; zero semi-axes disable it.
    Vec3 lobe_center{32.0, 45.0, 21.0};
    Vec3 lobe_semi_axes{6.0, 10.0, 5.0};
    double eye_radius = 5.0;
    Vec3 eye_left{19.0, 53.0, 16.0};
    Vec3 eye_right{45.0, 53.0, 16.0};
    double adipose_thickness = 3.0;
    double skull_thickness = 3.0;
    Intensities intensity{};
    double noise_sigma = 0.03;
    std::uint64_t seed = 0;
};

namespace detail {

inline double ellipsoid_value(const Vec3& p, const Vec3& c, const Vec3& a) {
    const double dx = (p.x - c.x) / a.x, dy = (p.y - c.y) / a.y, dz = (p.z - c.z) / a.z;
    return dx * dx + dy * dy + dz * dz;
}

inline bool lobe_enabled(const PhantomConfig& c) {
    return c.lobe_semi_axes.x > 0 && c.lobe_semi_axes.y > 0 && c.lobe_semi_axes.z > 0;
}

inline double dist(const Vec3& a, const Vec3& b) {
    return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
}

inline void require_inside(const PhantomConfig& c, const Vec3& center, const Vec3& half, const char* name) {
    for (std::size_t a = 0; a < 3; ++a) {
        const double lo = center[a] - half[a], hi = center[a] + half[a];
        if (lo < 0.0 || hi > static_cast<double>(c.dims[a] - 1))
            throw ConfigError(std::string("phantom: ") + name + " does not fit inside the volume along axis " +
                              "xyz"[a]);
    }
}

}  // namespace detail

inline void validate(const PhantomConfig& c) {
    if (c.dims.nx == 0 || c.dims.ny == 0 || c.dims.nz == 0) throw ConfigError("phantom: dims must be positive");
    make_grid(c.dims, c.spacing);
    const auto pos = [](const Vec3& v) { return v.x > 0 && v.y > 0 && v.z > 0; };
    if (!pos(c.brain_semi_axes)) throw ConfigError("phantom: brain semi-axes must be positive");
    if (c.skull_thickness < 0 || c.adipose_thickness < 0 || c.eye_radius < 0)
        throw ConfigError("phantom: thicknesses and radii must be >= 0");
    const double t = c.skull_thickness;
    detail::require_inside(c, c.brain_center,
                           {c.brain_semi_axes.x + t, c.brain_semi_axes.y + t, c.brain_semi_axes.z + t},
                           "brain ellipsoid (with skull shell)");
    if (detail::lobe_enabled(c))
        detail::require_inside(c, c.lobe_center,
                               {c.lobe_semi_axes.x + t, c.lobe_semi_axes.y + t, c.lobe_semi_axes.z + t},
                               "frontal lobe ellipsoid (with skull shell)");
    if (c.eye_radius > 0) {
        const double r = c.eye_radius + c.adipose_thickness;
        detail::require_inside(c, c.eye_left, {r, r, r}, "left eye sphere (with adipose shell)");
        detail::require_inside(c, c.eye_right, {r, r, r}, "right eye sphere (with adipose shell)");
    }
    const auto& in = c.intensity;
    for (double v : {in.background, in.skull, in.brain, in.eyes, in.adipose})
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("phantom: tissue intensities must lie in [0,1]");
    if (!(c.noise_sigma >= 0.0)) throw ConfigError("phantom: noise sigma must be >= 0");
}

inline bool in_brain(const PhantomConfig& c, const Vec3& p) {
    if (detail::ellipsoid_value(p, c.brain_center, c.brain_semi_axes) <= 1.0) return true;
    return detail::lobe_enabled(c) && detail::ellipsoid_value(p, c.lobe_center, c.lobe_semi_axes) <= 1.0;
}

/// Per-voxel tissue class, painted background < skull < adipose < eye < brain.
inline std::vector<Tissue> tissue_map(const PhantomConfig& c) {
    validate(c);
    const Dims& d = c.dims;
    std::vector<Tissue> t(d.size(), Tissue::background);
    const double s = c.skull_thickness;
    const Vec3 brain_outer{c.brain_semi_axes.x + s, c.brain_semi_axes.y + s, c.brain_semi_axes.z + s};
    const Vec3 lobe_outer{c.lobe_semi_axes.x + s, c.lobe_semi_axes.y + s, c.lobe_semi_axes.z + s};
    const bool lobe = detail::lobe_enabled(c);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto q = d.unflatten(i);
        const Vec3 p{static_cast<double>(q[0]), static_cast<double>(q[1]), static_cast<double>(q[2])};
        Tissue v = Tissue::background;
        if (s > 0 && (detail::ellipsoid_value(p, c.brain_center, brain_outer) <= 1.0 ||
                      (lobe && detail::ellipsoid_value(p, c.lobe_center, lobe_outer) <= 1.0)))
            v = Tissue::skull;
        if (c.eye_radius > 0) {
            for (const Vec3* eye : {&c.eye_left, &c.eye_right}) {
                const double r = detail::dist(p, *eye);
                if (r > c.eye_radius && r <= c.eye_radius + c.adipose_thickness && p.y < eye->y)
                    v = Tissue::adipose;
            }
            for (const Vec3* eye : {&c.eye_left, &c.eye_right})
                if (detail::dist(p, *eye) <= c.eye_radius) v = Tissue::eye;
        }
        if (in_brain(c, p)) v = Tissue::brain;
        t[i] = v;
    }
    return t;
}

struct Phantom {
    Volume3D image;
    LabelVolume mask;
};

/// Noisy intensity volume plus exact brain mask. Label volume depends on geometry only.
inline Phantom generate(const PhantomConfig& c) {
    const auto tissue = tissue_map(c);
    const Grid grid = make_grid(c.dims, c.spacing);
    std::vector<double> img(tissue.size());
    std::vector<std::uint8_t> mask(tissue.size());
    std::mt19937_64 rng(c.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto& in = c.intensity;
    for (std::size_t i = 0; i < tissue.size(); ++i) {
        double v = in.background;
        switch (tissue[i]) {
            case Tissue::skull: v = in.skull; break;
            case Tissue::adipose: v = in.adipose; break;
            case Tissue::eye: v = in.eyes; break;
            case Tissue::brain: v = in.brain; break;
            default: break;
        }
        if (c.noise_sigma > 0.0) v += c.noise_sigma * noise(rng);
        img[i] = std::clamp(v, 0.0, 1.0);
        mask[i] = tissue[i] == Tissue::brain ? 1 : 0;
    }
    return {Volume3D(grid, std::move(img)), LabelVolume(grid, std::move(mask), 2)};
}

/// Voxels of the adipose shells behind the eyes.
inline LabelVolume adipose_region(const PhantomConfig& c) {
    const auto tissue = tissue_map(c);
    std::vector<std::uint8_t> m(tissue.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = tissue[i] == Tissue::adipose ? 1 : 0;
    return LabelVolume(make_grid(c.dims, c.spacing), std::move(m), 2);
}

/// Binary dilation by a Euclidean ball of the given radius (in voxels), optionally gated per voxel.
template <class Gate>
LabelVolume dilate(const LabelVolume& mask, double radius, Gate allowed) {
    require_binary(mask, "dilate");
    const Dims& d = mask.dims();
    const long r = static_cast<long>(std::floor(radius));
    std::vector<std::array<long, 3>> ball;
    for (long dz = -r; dz <= r; ++dz)
        for (long dy = -r; dy <= r; ++dy)
            for (long dx = -r; dx <= r; ++dx)
                if (static_cast<double>(dx * dx + dy * dy + dz * dz) <= radius * radius) ball.push_back({dx, dy, dz});
    auto out = mask.to_vector();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (mask[i] != 1) continue;
        const auto p = d.unflatten(i);
        for (const auto& o : ball) {
            const long x = static_cast<long>(p[0]) + o[0], y = static_cast<long>(p[1]) + o[1],
                       z = static_cast<long>(p[2]) + o[2];
            if (!d.contains(x, y, z)) continue;
            const std::size_t j = d.index(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                                          static_cast<std::size_t>(z));
            if (allowed(j)) out[j] = 1;
        }
    }
    return LabelVolume(mask.grid(), std::move(out), 2);
}

inline LabelVolume dilate(const LabelVolume& mask, double radius) {
    return dilate(mask, radius, [](std::size_t) { return true; });
}

/// Region of interest behind the eyes: the adipose shells grown by `margin` voxels.
inline LabelVolume roi_behind_eyes(const PhantomConfig& c, double margin = 2.0) {
    return dilate(adipose_region(c), margin);
}

enum class Corruption { frontal_bulge, eye_adipose };

inline Corruption parse_corruption(const std::string& s) {
    if (s == "frontal-bulge") return Corruption::frontal_bulge;
    if (s == "eye-adipose") return Corruption::eye_adipose;
    throw ArgumentError("unknown corruption mode '" + s + "' (expected frontal-bulge or eye-adipose)");
}

/// Simulates the systematic over-inclusion of a poor automatic labeler. frontal-bulge dilates the
/// mask by 2 voxels within (and anterior to) the anterior third of the mask's y-extent; eye-adipose
/// also adds the given adipose region. The result always contains the input mask.
inline LabelVolume corrupt_labels(const LabelVolume& mask, Corruption mode,
                                  const LabelVolume* adipose = nullptr) {
    require_binary(mask, "corrupt_labels");
    const Dims& d = mask.dims();
    long ymin = -1, ymax = -1;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (mask[i] != 1) continue;
        const long y = static_cast<long>(d.unflatten(i)[1]);
        ymin = ymin < 0 ? y : std::min(ymin, y);
        ymax = std::max(ymax, y);
    }
    LabelVolume out = mask;
    if (ymax >= 0) {
        const long extent = ymax - ymin + 1;
        const long cut = ymax + 1 - (extent + 2) / 3;
        out = dilate(mask, 2.0, [&](std::size_t j) { return static_cast<long>(d.unflatten(j)[1]) >= cut; });
    }
    if (mode == Corruption::eye_adipose) {
        if (adipose == nullptr) throw ArgumentError("corrupt_labels: eye-adipose mode needs the adipose region");
        require_same_geometry(mask.grid(), adipose->grid(), "corrupt_labels");
        auto v = out.to_vector();
        for (std::size_t i = 0; i < v.size(); ++i)
            if ((*adipose)[i] == 1) v[i] = 1;
        out = LabelVolume(mask.grid(), std::move(v), 2);
    }
    return out;
}

struct Rotated {
    Volume3D image;
    LabelVolume mask;
};

/// Rotates about the volume centre in the plane orthogonal to `axis` (counter-clockwise from the
/// first in-plane axis toward the second). Intensities are resampled bilinearly, labels by nearest
/// neighbour; voxels sourced from outside the field get `fill` / label 0.
inline Rotated rotate_volume(const Volume3D& vol, const LabelVolume& mask, double degrees, Axis axis = Axis::z,
                             double fill = Intensities{}.background) {
    if (!(std::abs(degrees) <= 180.0)) throw ArgumentError("rotate_volume: |degrees| must be <= 180");
    require_same_geometry(vol.grid(), mask.grid(), "rotate_volume");
    const Dims& d = vol.dims();
    std::size_t a0 = 0, a1 = 1;
    if (axis == Axis::x) a0 = 1, a1 = 2;
    if (axis == Axis::y) a0 = 0, a1 = 2;
    const auto ax = static_cast<std::size_t>(axis);

    double c = std::cos(degrees * std::numbers::pi / 180.0), s = std::sin(degrees * std::numbers::pi / 180.0);
    const double quarter = degrees / 90.0;
    if (quarter == std::round(quarter)) {
        const long k = ((static_cast<long>(quarter) % 4) + 4) % 4;
        const double cs[4] = {1, 0, -1, 0}, sn[4] = {0, 1, 0, -1};
        c = cs[k];
        s = sn[k];
    }
    const double c0 = (static_cast<double>(d[a0]) - 1.0) / 2.0, c1 = (static_cast<double>(d[a1]) - 1.0) / 2.0;
    const double n0 = static_cast<double>(d[a0]) - 1.0, n1 = static_cast<double>(d[a1]) - 1.0;
    constexpr double eps = 1e-9;

    std::vector<double> img(d.size());
    std::vector<std::uint8_t> lab(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto p = d.unflatten(i);
        const double u = static_cast<double>(p[a0]) - c0, v = static_cast<double>(p[a1]) - c1;
        // inverse rotation gives the source position
        const double su = c * u + s * v + c0;
        const double sv = -s * u + c * v + c1;
        Index3 q = p;

        if (su >= -eps && su <= n0 + eps && sv >= -eps && sv <= n1 + eps) {
            const double cu = std::clamp(su, 0.0, n0), cv = std::clamp(sv, 0.0, n1);
            const auto u0 = static_cast<std::size_t>(std::floor(cu)), v0 = static_cast<std::size_t>(std::floor(cv));
            const std::size_t u1 = std::min<std::size_t>(u0 + 1, d[a0] - 1), v1 = std::min<std::size_t>(v0 + 1, d[a1] - 1);
            const double tu = cu - static_cast<double>(u0), tv = cv - static_cast<double>(v0);
            auto sample = [&](std::size_t uu, std::size_t vv) {
                q[a0] = uu;
                q[a1] = vv;
                q[ax] = p[ax];
                return vol[d.index(q)];
            };
            const double a = sample(u0, v0), b = sample(u0, v1), e = sample(u1, v0), f = sample(u1, v1);
            const double top = a + tv * (b - a), bot = e + tv * (f - e);
            img[i] = std::clamp(top + tu * (bot - top), std::min({a, b, e, f}), std::max({a, b, e, f}));
        } else {
            img[i] = fill;
        }

        const double ru = std::floor(su + 0.5), rv = std::floor(sv + 0.5);
        if (ru >= 0 && ru <= n0 && rv >= 0 && rv <= n1) {
            q = p;
            q[a0] = static_cast<std::size_t>(ru);
            q[a1] = static_cast<std::size_t>(rv);
            lab[i] = mask[d.index(q)];
        } else {
            lab[i] = 0;
        }
    }
    return {Volume3D(vol.grid(), std::move(img)), LabelVolume(mask.grid(), std::move(lab), mask.num_labels())};
}

/// Gamma contrast change standing in for a different scanner: v -> clamp(v)^gamma.
inline Volume3D contrast_shift(const Volume3D& vol, double gamma = 1.2) {
    if (!(gamma > 0.0)) throw ArgumentError("contrast_shift: gamma must be > 0");
    std::vector<double> out(vol.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(std::clamp(vol[i], 0.0, 1.0), gamma);
    return Volume3D(vol.grid(), std::move(out));
}

/// Uniformly rescales geometry and grid by `factor` (e.g. 0.5 halves resolution); physical size is kept.
inline PhantomConfig scaled(const PhantomConfig& c, double factor) {
    if (!(factor > 0.0)) throw ArgumentError("phantom::scaled: factor must be > 0");
    PhantomConfig o = c;
    auto sz = [&](std::size_t n) { return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(n * factor))); };
    o.dims = {sz(c.dims.nx), sz(c.dims.ny), sz(c.dims.nz)};
    o.spacing = {c.spacing.sx / factor, c.spacing.sy / factor, c.spacing.sz / factor};
    auto pt = [&](const Vec3& v) { return Vec3{v.x * factor, v.y * factor, v.z * factor}; };
    // centres are scaled about voxel centres so that the image stays centred
    auto ctr = [&](const Vec3& v) { return Vec3{(v.x + 0.5) * factor - 0.5, (v.y + 0.5) * factor - 0.5, (v.z + 0.5) * factor - 0.5}; };
    o.brain_center = ctr(c.brain_center);
    o.brain_semi_axes = pt(c.brain_semi_axes);
    o.lobe_center = ctr(c.lobe_center);
    o.lobe_semi_axes = pt(c.lobe_semi_axes);
    o.eye_left = ctr(c.eye_left);
    o.eye_right = ctr(c.eye_right);
    o.eye_radius = c.eye_radius * factor;
    o.adipose_thickness = c.adipose_thickness * factor;
    o.skull_thickness = c.skull_thickness * factor;
    return o;
}

/// Per-subject variation of a base config: small shifts of every primitive, +-8% brain size,
/// +-15% lobe size and +-0.03 tissue contrast. Noise seed is derived from the same subject seed.
inline PhantomConfig sample_subject(const PhantomConfig& base, std::uint64_t subject_seed) {
    std::mt19937_64 rng(derive_seed(subject_seed, "phantom.geometry"));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double unit = base.brain_semi_axes.x / 19.0;  // jitter scales with phantom resolution
    PhantomConfig c = base;
    auto shift = [&](Vec3& v, double amount) {
        v.x += amount * unit * u(rng);
        v.y += amount * unit * u(rng);
        v.z += amount * unit * u(rng);
    };
    auto scale = [&](Vec3& v, double frac) {
        v.x *= 1.0 + frac * u(rng);
        v.y *= 1.0 + frac * u(rng);
        v.z *= 1.0 + frac * u(rng);
    };
    shift(c.brain_center, 1.0);
    scale(c.brain_semi_axes, 0.08);
    shift(c.lobe_center, 1.0);
    scale(c.lobe_semi_axes, 0.15);
    const double eye_dx = 0.8 * unit * u(rng), eye_dy = 0.8 * unit * u(rng), eye_dz = 0.8 * unit * u(rng);
    for (Vec3* e : {&c.eye_left, &c.eye_right}) {
        e->x += (e == &c.eye_left ? -eye_dx : eye_dx);
        e->y += eye_dy;
        e->z += eye_dz;
    }
    c.eye_radius *= 1.0 + 0.1 * u(rng);
    auto jit = [&](double& v) { v = std::clamp(v + 0.03 * u(rng), 0.0, 1.0); };
    jit(c.intensity.skull);
    jit(c.intensity.brain);
    jit(c.intensity.eyes);
    jit(c.intensity.adipose);
    c.seed = derive_seed(subject_seed, "phantom.noise");
    validate(c);
    return c;
}

}  // namespace bseg::phantom
