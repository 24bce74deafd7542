#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bseg/core/error.hpp"

namespace bseg {

/// x = left-right, y = anterior-posterior, z = superior-inferior.
enum class Axis { x = 0, y = 1, z = 2 };

inline Axis parse_axis(const std::string& s) {
    if (s == "x") return Axis::x;
    if (s == "y") return Axis::y;
    if (s == "z") return Axis::z;
    throw ArgumentError("axis must be one of x, y, z (got '" + s + "')");
}

inline const char* axis_name(Axis a) {
    switch (a) {
        case Axis::x: return "x";
        case Axis::y: return "y";
        default: return "z";
    }
}

using Index3 = std::array<std::size_t, 3>;

/// Voxel counts. Linear layout has x varying fastest, then y, then z.
struct Dims {
    std::size_t nx = 0, ny = 0, nz = 0;

    constexpr std::size_t size() const noexcept { return nx * ny * nz; }
    constexpr std::size_t operator[](std::size_t axis) const noexcept {
        return axis == 0 ? nx : axis == 1 ? ny : nz;
    }
    constexpr std::size_t extent(Axis a) const noexcept { return (*this)[static_cast<std::size_t>(a)]; }
    constexpr std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return x + nx * (y + ny * z);
    }
    constexpr std::size_t index(const Index3& p) const noexcept { return index(p[0], p[1], p[2]); }
    constexpr Index3 unflatten(std::size_t i) const noexcept {
        return {i % nx, (i / nx) % ny, i / (nx * ny)};
    }
    constexpr bool contains(long x, long y, long z) const noexcept {
        return x >= 0 && y >= 0 && z >= 0 && static_cast<std::size_t>(x) < nx &&
               static_cast<std::size_t>(y) < ny && static_cast<std::size_t>(z) < nz;
    }
    friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(const Dims& d) {
    return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

/// Millimetres per voxel along each axis.
struct Spacing {
    double sx = 1.0, sy = 1.0, sz = 1.0;

    constexpr double operator[](std::size_t axis) const noexcept {
        return axis == 0 ? sx : axis == 1 ? sy : sz;
    }
    friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

/// NIfTI orientation fields, carried through read/write untouched.
struct Orientation {
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    float qfac = 1.0f;
    std::array<float, 3> quatern{0.0f, 0.0f, 0.0f};
    std::array<float, 3> qoffset{0.0f, 0.0f, 0.0f};
    std::array<std::array<float, 4>, 3> srow{};
    friend bool operator==(const Orientation&, const Orientation&) = default;
};

struct Grid {
    Dims dims;
    Spacing spacing;
    Orientation orientation;

    std::size_t size() const noexcept { return dims.size(); }
    bool same_geometry(const Grid& o) const noexcept { return dims == o.dims && spacing == o.spacing; }

    void validate() const {
        if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0)
            throw ShapeError("volume dims must be positive (got " + to_string(dims) + ")");
        for (std::size_t a = 0; a < 3; ++a)
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
                throw ShapeError("voxel spacing must be positive and finite");
    }
};

inline Grid make_grid(Dims d, Spacing s = {}) {
    Grid g{d, s, {}};
    g.validate();
    return g;
}

inline void require_same_geometry(const Grid& a, const Grid& b, const char* what) {
    if (!a.same_geometry(b))
        throw ShapeError(std::string(what) + ": grid mismatch (" + to_string(a.dims) + " vs " +
                         to_string(b.dims) + ")");
}

namespace detail {

struct IntensityPolicy {
    static constexpr const char* name = "Volume3D";
    static void check(double v, std::size_t i) {
        if (!std::isfinite(v))
            throw NumericError(std::string(name) + ": non-finite value at voxel " + std::to_string(i));
    }
};

struct UncertaintyPolicy {
    static constexpr const char* name = "UncertaintyVolume";
    static void check(double v, std::size_t i) {
        if (!std::isfinite(v) || v < 0.0)
            throw NumericError(std::string(name) + ": value must be finite and >= 0 at voxel " +
                               std::to_string(i));
    }
};

}  // namespace detail

/// Immutable real-valued field on a voxel grid; the policy fixes the value contract.
template <class Policy>
class RealField {
public:
    RealField() = default;
    RealField(Grid grid, std::vector<double> data) : grid_(std::move(grid)), data_(std::move(data)) {
        grid_.validate();
        if (data_.size() != grid_.size())
            throw ShapeError(std::string(Policy::name) + ": data length " + std::to_string(data_.size()) +
                             " != voxel count " + std::to_string(grid_.size()));
        for (std::size_t i = 0; i < data_.size(); ++i) Policy::check(data_[i], i);
    }
    static RealField filled(Grid grid, double value) {
        const std::size_t n = grid.size();
        return RealField(std::move(grid), std::vector<double>(n, value));
    }

    const Grid& grid() const noexcept { return grid_; }
    const Dims& dims() const noexcept { return grid_.dims; }
    const Spacing& spacing() const noexcept { return grid_.spacing; }
    std::size_t size() const noexcept { return data_.size(); }
    std::span<const double> data() const noexcept { return data_; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return data_[grid_.dims.index(x, y, z)];
    }
    std::vector<double> to_vector() const { return data_; }

    friend bool operator==(const RealField& a, const RealField& b) {
        return a.grid_.same_geometry(b.grid_) && a.data_ == b.data_;
    }

private:
    Grid grid_;
    std::vector<double> data_;
};

using Volume3D = RealField<detail::IntensityPolicy>;
using UncertaintyVolume = RealField<detail::UncertaintyPolicy>;

/// Integer label field with labels in [0, num_labels).
class LabelVolume {
public:
    LabelVolume() = default;
    LabelVolume(Grid grid, std::vector<std::uint8_t> data, unsigned num_labels = 2)
        : grid_(std::move(grid)), data_(std::move(data)), num_labels_(num_labels) {
        grid_.validate();
        if (num_labels_ < 2 || num_labels_ > 256) throw ConfigError("LabelVolume: num_labels must be in [2, 256]");
        if (data_.size() != grid_.size())
            throw ShapeError("LabelVolume: data length " + std::to_string(data_.size()) + " != voxel count " +
                             std::to_string(grid_.size()));
        for (std::size_t i = 0; i < data_.size(); ++i)
            if (data_[i] >= num_labels_)
                throw TypeError("LabelVolume: label " + std::to_string(data_[i]) + " at voxel " + std::to_string(i) +
                                " is >= num_labels " + std::to_string(num_labels_));
    }
    static LabelVolume filled(Grid grid, std::uint8_t value, unsigned num_labels = 2) {
        const std::size_t n = grid.size();
        return LabelVolume(std::move(grid), std::vector<std::uint8_t>(n, value), num_labels);
    }

    const Grid& grid() const noexcept { return grid_; }
    const Dims& dims() const noexcept { return grid_.dims; }
    const Spacing& spacing() const noexcept { return grid_.spacing; }
    std::size_t size() const noexcept { return data_.size(); }
    unsigned num_labels() const noexcept { return num_labels_; }
    std::span<const std::uint8_t> data() const noexcept { return data_; }
    std::uint8_t operator[](std::size_t i) const noexcept { return data_[i]; }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return data_[grid_.dims.index(x, y, z)];
    }
    std::vector<std::uint8_t> to_vector() const { return data_; }
    std::size_t count(std::uint8_t label) const {
        return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), label));
    }

    friend bool operator==(const LabelVolume& a, const LabelVolume& b) {
        return a.grid_.same_geometry(b.grid_) && a.num_labels_ == b.num_labels_ && a.data_ == b.data_;
    }

private:
    Grid grid_;
    std::vector<std::uint8_t> data_;
    unsigned num_labels_ = 2;
};

/// Throws TypeError unless the volume is a two-label mask.
inline void require_binary(const LabelVolume& m, const char* what) {
    if (m.num_labels() != 2) throw TypeError(std::string(what) + ": mask must be binary (num_labels == 2)");
}

constexpr double kSimplexTolerance = 1e-5;

/// Per-voxel label distribution: L reals per voxel, voxel-major.
class ProbVolume {
public:
    ProbVolume() = default;
    ProbVolume(Grid grid, unsigned num_labels, std::vector<double> data)
        : grid_(std::move(grid)), num_labels_(num_labels), data_(std::move(data)) {
        grid_.validate();
        if (num_labels_ < 2) throw ConfigError("ProbVolume: num_labels must be >= 2");
        if (data_.size() != grid_.size() * num_labels_)
            throw ShapeError("ProbVolume: data length " + std::to_string(data_.size()) + " != voxels x labels");
        for (std::size_t i = 0; i < grid_.size(); ++i) {
            double s = 0.0;
            for (unsigned l = 0; l < num_labels_; ++l) {
                const double p = data_[i * num_labels_ + l];
                if (!(p >= 0.0 && p <= 1.0))
                    throw NumericError("ProbVolume: probability outside [0,1] at voxel " + std::to_string(i));
                s += p;
            }
            if (std::abs(s - 1.0) > kSimplexTolerance)
                throw NumericError("ProbVolume: probabilities at voxel " + std::to_string(i) + " sum to " +
                                   std::to_string(s));
        }
    }

    /// Assembles label channels; each channel is renormalized per voxel when `renormalize` is set.
    static ProbVolume from_channels(const std::vector<Volume3D>& channels, bool renormalize = false) {
        if (channels.size() < 2) throw ConfigError("ProbVolume needs at least two channels");
        const Grid& g = channels.front().grid();
        for (const auto& c : channels) require_same_geometry(g, c.grid(), "ProbVolume::from_channels");
        const auto L = static_cast<unsigned>(channels.size());
        std::vector<double> data(g.size() * L);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double s = 0.0;
            for (unsigned l = 0; l < L; ++l) {
                const double p = std::clamp(channels[l][i], 0.0, 1.0);
                data[i * L + l] = p;
                s += p;
            }
            if (renormalize && s > 0.0)
                for (unsigned l = 0; l < L; ++l) data[i * L + l] /= s;
        }
        return ProbVolume(g, L, std::move(data));
    }

    const Grid& grid() const noexcept { return grid_; }
    const Dims& dims() const noexcept { return grid_.dims; }
    std::size_t voxels() const noexcept { return grid_.size(); }
    unsigned num_labels() const noexcept { return num_labels_; }
    std::span<const double> data() const noexcept { return data_; }
    double prob(std::size_t voxel, unsigned label) const noexcept { return data_[voxel * num_labels_ + label]; }

    Volume3D channel(unsigned label) const {
        std::vector<double> out(voxels());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = prob(i, label);
        return Volume3D(grid_, std::move(out));
    }

    /// Per-voxel argmax; ties resolve to the lowest label index.
    LabelVolume argmax() const {
        std::vector<std::uint8_t> out(voxels());
        for (std::size_t i = 0; i < out.size(); ++i) {
            unsigned best = 0;
            for (unsigned l = 1; l < num_labels_; ++l)
                if (prob(i, l) > prob(i, best)) best = l;
            out[i] = static_cast<std::uint8_t>(best);
        }
        return LabelVolume(grid_, std::move(out), num_labels_);
    }

    friend bool operator==(const ProbVolume& a, const ProbVolume& b) {
        return a.grid_.same_geometry(b.grid_) && a.num_labels_ == b.num_labels_ && a.data_ == b.data_;
    }

private:
    Grid grid_;
    unsigned num_labels_ = 2;
    std::vector<double> data_;
};

/// Divides each voxel's L entries by their sum (uniform when the sum is zero).
inline void renormalize_simplex(std::span<double> data, unsigned num_labels) {
    for (std::size_t i = 0; i + num_labels <= data.size(); i += num_labels) {
        double s = 0.0;
        for (unsigned l = 0; l < num_labels; ++l) {
            data[i + l] = std::max(data[i + l], 0.0);
            s += data[i + l];
        }
        for (unsigned l = 0; l < num_labels; ++l)
            data[i + l] = s > 0.0 ? std::min(data[i + l] / s, 1.0) : 1.0 / num_labels;
    }
}

inline LabelVolume mask_from(const Volume3D& like, std::vector<std::uint8_t> data) {
    return LabelVolume(like.grid(), std::move(data), 2);
}

}  // namespace bseg
