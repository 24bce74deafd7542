#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bseg/core/error.hpp"
#include "bseg/preprocess/preprocess.hpp"
#include "bseg/volume/volume.hpp"

namespace bseg::metrics {

/// sqrt(sum of squared stored per-voxel uncertainty values), over the ROI when one is given.
/// The stored value is the MC-dropout variance; it is used as-is.
inline double total_uncertainty(const UncertaintyVolume& u, const LabelVolume* roi = nullptr) {
    if (roi != nullptr) {
        require_binary(*roi, "total_uncertainty");
        if (roi->dims() != u.dims()) throw ShapeError("total_uncertainty: ROI dims differ from uncertainty volume");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        if (roi == nullptr || (*roi)[i] == 1) acc += u[i] * u[i];
    return std::sqrt(acc);
}

/// Voxel-wise mean over aligned maps, averaged along `axis`, then ln(v + eps). The result uses the
/// in-plane layout of slice_stack for the same axis.
inline Image2D average_log_collapse(const std::vector<Volume3D>& maps, Axis axis, double eps = 1e-6) {
    if (maps.empty()) throw ArgumentError("average_log_collapse: need at least one map");
    if (!(eps > 0.0)) throw ArgumentError("average_log_collapse: eps must be > 0");
    const Dims& d = maps.front().dims();
    for (std::size_t k = 0; k < maps.size(); ++k)
        if (maps[k].dims() != d)
            throw ShapeError("average_log_collapse: map " + std::to_string(k) + " has dims " + to_string(maps[k].dims()) +
                             ", expected " + to_string(d));
    std::vector<double> mean(d.size(), 0.0);
    for (const auto& m : maps)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += m[i];
    for (auto& v : mean) v /= static_cast<double>(maps.size());

    const auto slices = slice_stack(Volume3D(maps.front().grid(), std::move(mean)), axis);
    Image2D out(slices.front().h, slices.front().w);
    for (const auto& s : slices)
        for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += s.data[k];
    for (auto& v : out.data) v = std::log(v / static_cast<double>(slices.size()) + eps);
    return out;
}

inline void write_csv(const Image2D& img, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < img.h; ++i) {
        for (std::size_t j = 0; j < img.w; ++j) {
            if (j) out << ',';
            out << img.at(i, j);
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace bseg::metrics
