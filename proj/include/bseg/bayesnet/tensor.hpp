#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bseg/core/error.hpp"

namespace bseg::net {

/// Dense NCHW tensor of doubles.
struct Tensor {
    std::size_t n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, double fill = 0.0)
        : n(n_), c(c_), h(h_), w(w_), v(n_ * c_ * h_ * w_, fill) {}

    std::size_t size() const noexcept { return v.size(); }
    std::size_t plane() const noexcept { return h * w; }
    double* sample(std::size_t i) { return v.data() + i * c * h * w; }
    const double* sample(std::size_t i) const { return v.data() + i * c * h * w; }
    double& at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) { return v[((i * c + ch) * h + y) * w + x]; }
    double at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) const {
        return v[((i * c + ch) * h + y) * w + x];
    }
    bool same_shape(const Tensor& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }
    friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_string(const Tensor& t) {
    return std::to_string(t.n) + "x" + std::to_string(t.c) + "x" + std::to_string(t.h) + "x" + std::to_string(t.w);
}

}  // namespace bseg::net
