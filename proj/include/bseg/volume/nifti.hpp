#pragma once

// Uncompressed single-file NIfTI-1 (.nii) reader and writer, little-endian hosts only.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "bseg/core/error.hpp"
#include "bseg/volume/volume.hpp"

namespace bseg::nifti {

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::size_t kVoxOffset = 352;

enum DataType : std::int16_t {
    kUInt8 = 2,
    kInt16 = 4,
    kFloat32 = 16,
    kFloat64 = 64,
};

// Field byte offsets within the 348-byte header.
namespace off {
inline constexpr std::size_t sizeof_hdr = 0;
inline constexpr std::size_t dim = 40;
inline constexpr std::size_t datatype = 70;
inline constexpr std::size_t bitpix = 72;
inline constexpr std::size_t pixdim = 76;
inline constexpr std::size_t vox_offset = 108;
inline constexpr std::size_t scl_slope = 112;
inline constexpr std::size_t scl_inter = 116;
inline constexpr std::size_t xyzt_units = 123;
inline constexpr std::size_t descrip = 148;
inline constexpr std::size_t qform_code = 252;
inline constexpr std::size_t sform_code = 254;
inline constexpr std::size_t quatern_b = 256;
inline constexpr std::size_t qoffset_x = 268;
inline constexpr std::size_t srow_x = 280;
inline constexpr std::size_t magic = 344;
}  // namespace off

/// Raw decoded image: geometry plus scaled voxel values in double precision.
struct Image {
    Grid grid;
    std::int16_t datatype = kFloat32;
    std::vector<double> values;

    Volume3D to_volume() const { return Volume3D(grid, values); }

    /// Interprets the payload as integer labels. `num_labels` 0 means max label + 1 (at least 2).
    LabelVolume to_labels(unsigned num_labels = 0) const {
        std::vector<std::uint8_t> labels(values.size());
        double max_label = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double v = values[i];
            if (!(v >= 0.0) || v > 255.0 || std::floor(v) != v)
                throw TypeError("label image holds a non-label value " + std::to_string(v) + " at voxel " +
                                std::to_string(i));
            labels[i] = static_cast<std::uint8_t>(v);
            max_label = std::max(max_label, v);
        }
        if (num_labels == 0) num_labels = std::max(2u, static_cast<unsigned>(max_label) + 1u);
        return LabelVolume(grid, std::move(labels), num_labels);
    }
};

namespace detail {

template <typename T>
T load(const std::vector<char>& buf, std::size_t pos) {
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    return v;
}

template <typename T>
void store(std::vector<char>& buf, std::size_t pos, T v) {
    std::memcpy(buf.data() + pos, &v, sizeof(T));
}

inline int bits_for(std::int16_t datatype) {
    switch (datatype) {
        case kUInt8: return 8;
        case kInt16: return 16;
        case kFloat32: return 32;
        case kFloat64: return 64;
        default: return 0;
    }
}

}  // namespace detail

/// Decodes an in-memory .nii image.
inline Image decode(const std::vector<char>& buf) {
    using detail::load;
    if (buf.size() < static_cast<std::size_t>(kHeaderSize))
        throw FormatError("truncated NIfTI header: " + std::to_string(buf.size()) + " bytes", buf.size());
    const auto sizeof_hdr = load<std::int32_t>(buf, off::sizeof_hdr);
    if (sizeof_hdr != kHeaderSize) {
        const auto u = static_cast<std::uint32_t>(sizeof_hdr);
        const std::uint32_t swapped = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
        if (swapped == static_cast<std::uint32_t>(kHeaderSize))
            throw UnsupportedError("big-endian NIfTI files are not supported");
        throw FormatError("sizeof_hdr is " + std::to_string(sizeof_hdr) + ", expected 348", off::sizeof_hdr);
    }
    if (std::memcmp(buf.data() + off::magic, "n+1\0", 4) != 0)
        throw FormatError("magic is not \"n+1\" (only single-file NIfTI-1 is supported)", off::magic);

    const auto datatype = load<std::int16_t>(buf, off::datatype);
    const int bits = detail::bits_for(datatype);
    if (bits == 0) throw UnsupportedError("unsupported datatype code " + std::to_string(datatype));
    const auto bitpix = load<std::int16_t>(buf, off::bitpix);
    if (bitpix != bits)
        throw FormatError("bitpix " + std::to_string(bitpix) + " inconsistent with datatype " +
                              std::to_string(datatype),
                          off::bitpix);

    const auto ndim = load<std::int16_t>(buf, off::dim);
    if (ndim < 1 || ndim > 7) throw FormatError("dim[0] out of range: " + std::to_string(ndim), off::dim);
    std::vector<std::int64_t> extents;
    for (int k = 1; k <= ndim; ++k) {
        const auto d = load<std::int16_t>(buf, off::dim + 2 * k);
        if (d < 1) throw FormatError("dim[" + std::to_string(k) + "] must be >= 1", off::dim + 2 * k);
        extents.push_back(d);
    }
    while (extents.size() > 3 && extents.back() == 1) extents.pop_back();
    if (extents.size() != 3)
        throw ShapeError("dimensionality error: expected a 3D image, found " + std::to_string(extents.size()) +
                         " non-singleton dimensions");

    Grid grid;
    grid.dims = {static_cast<std::size_t>(extents[0]), static_cast<std::size_t>(extents[1]),
                 static_cast<std::size_t>(extents[2])};
    double sp[3];
    for (int k = 0; k < 3; ++k) {
        const double p = std::abs(static_cast<double>(load<float>(buf, off::pixdim + 4 * (k + 1))));
        if (!(p > 0.0) || !std::isfinite(p))
            throw FormatError("pixdim[" + std::to_string(k + 1) + "] must be positive", off::pixdim + 4 * (k + 1));
        sp[k] = p;
    }
    grid.spacing = {sp[0], sp[1], sp[2]};

    Orientation& o = grid.orientation;
    o.qfac = load<float>(buf, off::pixdim);
    o.qform_code = load<std::int16_t>(buf, off::qform_code);
    o.sform_code = load<std::int16_t>(buf, off::sform_code);
    for (int k = 0; k < 3; ++k) {
        o.quatern[k] = load<float>(buf, off::quatern_b + 4 * k);
        o.qoffset[k] = load<float>(buf, off::qoffset_x + 4 * k);
        for (int c = 0; c < 4; ++c) o.srow[k][c] = load<float>(buf, off::srow_x + 16 * k + 4 * c);
    }

    const float vox_offset_f = load<float>(buf, off::vox_offset);
    if (!(vox_offset_f >= static_cast<float>(kHeaderSize)) || std::floor(vox_offset_f) != vox_offset_f)
        throw FormatError("invalid vox_offset " + std::to_string(vox_offset_f), off::vox_offset);
    const auto vox_offset = static_cast<std::size_t>(vox_offset_f);
    const std::size_t n = grid.dims.size();
    const std::size_t bytes = n * static_cast<std::size_t>(bits / 8);
    if (buf.size() < vox_offset + bytes)
        throw FormatError("voxel payload truncated: need " + std::to_string(bytes) + " bytes", vox_offset);

    const double slope = load<float>(buf, off::scl_slope);
    const double inter = load<float>(buf, off::scl_inter);
    const bool scaled = slope != 0.0 && std::isfinite(slope) && !(slope == 1.0 && inter == 0.0);

    Image img;
    img.grid = grid;
    img.datatype = datatype;
    img.values.resize(n);
    const std::size_t base = vox_offset;
    for (std::size_t i = 0; i < n; ++i) {
        double v = 0.0;
        switch (datatype) {
            case kUInt8: v = static_cast<unsigned char>(buf[base + i]); break;
            case kInt16: v = load<std::int16_t>(buf, base + 2 * i); break;
            case kFloat32: v = load<float>(buf, base + 4 * i); break;
            default: v = load<double>(buf, base + 8 * i); break;
        }
        img.values[i] = scaled ? v * slope + inter : v;
    }
    return img;
}

inline Image read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode(buf);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    } catch (const UnsupportedError& e) {
        throw UnsupportedError(path.string() + ": " + e.what());
    } catch (const ShapeError& e) {
        throw ShapeError(path.string() + ": " + e.what());
    }
}

inline Volume3D read_volume(const std::filesystem::path& path) { return read(path).to_volume(); }

inline LabelVolume read_labels(const std::filesystem::path& path, unsigned num_labels = 0) {
    return read(path).to_labels(num_labels);
}

/// Encodes a header plus payload; `datatype` must be kUInt8 or kFloat32.
inline std::vector<char> encode(const Grid& grid, std::int16_t datatype, std::span<const double> values) {
    using detail::store;
    if (datatype != kUInt8 && datatype != kFloat32)
        throw UnsupportedError("writer supports datatype codes 2 and 16 only, got " + std::to_string(datatype));
    const int bits = detail::bits_for(datatype);
    const std::size_t n = grid.dims.size();
    if (values.size() != n) throw ShapeError("nifti::encode: payload length does not match dims");
    for (std::size_t a = 0; a < 3; ++a)
        if (grid.dims[a] > 32767) throw UnsupportedError("NIfTI-1 dims are limited to 32767 per axis");

    std::vector<char> buf(kVoxOffset + n * static_cast<std::size_t>(bits / 8), 0);
    store<std::int32_t>(buf, off::sizeof_hdr, kHeaderSize);
    const std::int16_t dim[8] = {3, static_cast<std::int16_t>(grid.dims.nx), static_cast<std::int16_t>(grid.dims.ny),
                                 static_cast<std::int16_t>(grid.dims.nz), 1, 1, 1, 1};
    for (int k = 0; k < 8; ++k) store<std::int16_t>(buf, off::dim + 2 * k, dim[k]);
    store<std::int16_t>(buf, off::datatype, datatype);
    store<std::int16_t>(buf, off::bitpix, static_cast<std::int16_t>(bits));
    const Orientation& o = grid.orientation;
    const float pixdim[8] = {o.qfac == 0.0f ? 1.0f : o.qfac, static_cast<float>(grid.spacing.sx),
                             static_cast<float>(grid.spacing.sy), static_cast<float>(grid.spacing.sz),
                             0.0f, 0.0f, 0.0f, 0.0f};
    for (int k = 0; k < 8; ++k) store<float>(buf, off::pixdim + 4 * k, pixdim[k]);
    store<float>(buf, off::vox_offset, static_cast<float>(kVoxOffset));
    store<float>(buf, off::scl_slope, 1.0f);
    store<float>(buf, off::scl_inter, 0.0f);
    buf[off::xyzt_units] = 2;  // millimetres
    std::memcpy(buf.data() + off::descrip, "bseg", 4);
    store<std::int16_t>(buf, off::qform_code, o.qform_code);
    store<std::int16_t>(buf, off::sform_code, o.sform_code);
    for (int k = 0; k < 3; ++k) {
        store<float>(buf, off::quatern_b + 4 * k, o.quatern[k]);
        store<float>(buf, off::qoffset_x + 4 * k, o.qoffset[k]);
        for (int c = 0; c < 4; ++c) store<float>(buf, off::srow_x + 16 * k + 4 * c, o.srow[k][c]);
    }
    std::memcpy(buf.data() + off::magic, "n+1\0", 4);

    for (std::size_t i = 0; i < n; ++i) {
        if (datatype == kUInt8)
            buf[kVoxOffset + i] = static_cast<char>(static_cast<unsigned char>(values[i]));
        else
            store<float>(buf, kVoxOffset + 4 * i, static_cast<float>(values[i]));
    }
    return buf;
}

inline void write_bytes(const std::vector<char>& buf, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

template <class Policy>
void write(const RealField<Policy>& vol, const std::filesystem::path& path) {
    write_bytes(encode(vol.grid(), kFloat32, vol.data()), path);
}

inline void write(const LabelVolume& vol, const std::filesystem::path& path) {
    const std::vector<double> values(vol.data().begin(), vol.data().end());
    write_bytes(encode(vol.grid(), kUInt8, values), path);
}

/// Writes one label channel of a probability volume as float32.
inline void write_channel(const ProbVolume& probs, unsigned label, const std::filesystem::path& path) {
    write(probs.channel(label), path);
}

}  // namespace bseg::nifti
