#pragma once

// Weights file: magic "BSEGW1", config block, step counter, then every tensor as little-endian float64 in
// declaration order. Tensor sizes follow from the config.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "bseg/bayesnet/network.hpp"

namespace bseg::net {

inline constexpr char kWeightsMagic[6] = {'B', 'S', 'E', 'G', 'W', '1'};

namespace detail {

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf.insert(buf.end(), c, c + n);
    }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    std::vector<char> buf;

private:
    template <class U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
};

class Reader {
public:
    explicit Reader(const std::vector<char>& b) : buf_(b) {}
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    void need(std::size_t n, const char* what) const {
        if (buf_.size() - pos_ < n) throw FormatError(std::string("weights file truncated in ") + what, pos_);
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }
    void skip(std::size_t n) { pos_ += n; }

private:
    template <class U>
    U le() {
        need(sizeof(U), "header");
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }
    const std::vector<char>& buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_weights(const NetworkWeights& w) {
    detail::Writer out;
    const auto& c = w.config;
    out.bytes(kWeightsMagic, sizeof kWeightsMagic);
    out.u32(c.depth);
    for (auto ch : c.channels) out.u32(static_cast<std::uint32_t>(ch));
    out.u32(c.num_labels);
    out.f64(c.dropout);
    out.f64(c.bn_eps);
    out.f64(c.bn_momentum);
    out.u64(w.step);
    w.for_each_tensor([&](const std::string&, const std::vector<double>& v) {
        for (double x : v) out.f64(x);
    });
    return out.buf;
}

inline NetworkWeights decode_weights(const std::vector<char>& buf) {
    if (buf.size() < sizeof kWeightsMagic || std::memcmp(buf.data(), kWeightsMagic, sizeof kWeightsMagic) != 0)
        throw FormatError("not a weights file (missing BSEGW1 magic)", 0);
    detail::Reader in(buf);
    in.skip(sizeof kWeightsMagic);
    NetworkConfig c;
    c.depth = in.u32();
    if (c.depth < 1 || c.depth > 16) throw FormatError("implausible network depth " + std::to_string(c.depth), in.pos() - 4);
    c.channels.resize(c.depth);
    for (auto& ch : c.channels) ch = in.u32();
    c.num_labels = in.u32();
    c.dropout = in.f64();
    c.bn_eps = in.f64();
    c.bn_momentum = in.f64();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid config block: ") + e.what(), in.pos());
    }
    NetworkWeights w(c);
    w.step = in.u64();
    w.for_each_tensor([&](const std::string& name, std::vector<double>& v) {
        in.need(v.size() * 8, name.c_str());
        for (double& x : v) x = in.f64();
    });
    if (in.remaining() != 0)
        throw FormatError(std::to_string(in.remaining()) + " trailing bytes after the last tensor", in.pos());
    for (const auto& b : w.enc_bn)
        for (double v : b.var)
            if (!(v >= 0.0)) throw FormatError("negative running variance", in.pos());
    for (const auto& b : w.dec_bn)
        for (double v : b.var)
            if (!(v >= 0.0)) throw FormatError("negative running variance", in.pos());
    return w;
}

inline void save_weights(const NetworkWeights& w, const std::filesystem::path& path) {
    const auto buf = encode_weights(w);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline NetworkWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_weights(buf);
}

}  // namespace bseg::net
