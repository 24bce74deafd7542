#pragma once

// Layer primitives with explicit forward/backward passes. Convolutions go through im2col and a GEMM.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "bseg/bayesnet/tensor.hpp"
#include "bseg/core/seed.hpp"

namespace bseg::net {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvLayer {
    std::size_t cin = 0, cout = 0, k = 3;
    std::vector<double> w;  // cout x cin x k x k
    std::vector<double> b;  // cout

    ConvLayer() = default;
    ConvLayer(std::size_t cin_, std::size_t cout_, std::size_t k_)
        : cin(cin_), cout(cout_), k(k_), w(cout_ * cin_ * k_ * k_, 0.0), b(cout_, 0.0) {}
    std::size_t fan_in() const noexcept { return cin * k * k; }
};

struct BatchNorm {
    std::vector<double> gamma, beta, mean, var;

    BatchNorm() = default;
    explicit BatchNorm(std::size_t c) : gamma(c, 1.0), beta(c, 0.0), mean(c, 0.0), var(c, 1.0) {}
    std::size_t channels() const noexcept { return gamma.size(); }
};

namespace detail {

/// col is (cin*k*k) x (h*w), zero padding k/2, stride 1.
inline void im2col(const double* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t k, double* col) {
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    const std::size_t P = h * w;
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                double* row = col + ((c * k + ky) * k + kx) * P;
                for (std::size_t y = 0; y < h; ++y) {
                    const auto sy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(ky) - pad;
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        const auto sx = static_cast<std::ptrdiff_t>(xx) + static_cast<std::ptrdiff_t>(kx) - pad;
                        const bool in = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                                        sx < static_cast<std::ptrdiff_t>(w);
                        row[y * w + xx] = in ? x[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)]
                                             : 0.0;
                    }
                }
            }
}

inline void col2im(const double* col, std::size_t cin, std::size_t h, std::size_t w, std::size_t k, double* dx) {
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    const std::size_t P = h * w;
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const double* row = col + ((c * k + ky) * k + kx) * P;
                for (std::size_t y = 0; y < h; ++y) {
                    const auto sy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(ky) - pad;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        const auto sx = static_cast<std::ptrdiff_t>(xx) + static_cast<std::ptrdiff_t>(kx) - pad;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                        dx[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] += row[y * w + xx];
                    }
                }
            }
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double unit_uniform(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

}  // namespace detail

inline void require_finite(const Tensor& t, const std::string& layer) {
    for (double x : t.v)
        if (!std::isfinite(x)) throw NumericError("non-finite activation after layer " + layer);
}

// ---- convolution ----

struct ConvCache {
    std::vector<RowMat> cols;  // per sample
};

namespace detail {

// Eigen evaluates tiny and vector-shaped products with reductions whose order depends on buffer
// alignment. Those shapes go through a fixed-order loop so results do not depend on addresses.
template <class A, class B, class C>
void product(const A& a, const B& b, C&& c, bool accumulate) {
    const Eigen::Index m = a.rows(), k = a.cols(), n = b.cols();
    if (m > 1 && n > 1 && k > 1 && m + n + k >= EIGEN_GEMM_TO_COEFFBASED_THRESHOLD) {
        if (accumulate)
            c.noalias() += a * b;
        else
            c.noalias() = a * b;
        return;
    }
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            double s = accumulate ? c(i, j) : 0.0;
            for (Eigen::Index q = 0; q < k; ++q) s += a(i, q) * b(q, j);
            c(i, j) = s;
        }
}

}  // namespace detail

inline Tensor conv_forward(const ConvLayer& L, const Tensor& x, ConvCache* cache) {
    if (x.c != L.cin) throw ShapeError("conv: input has " + std::to_string(x.c) + " channels, expected " +
                                       std::to_string(L.cin));
    Tensor y(x.n, L.cout, x.h, x.w);
    const std::size_t K = L.fan_in(), P = x.plane();
    const Eigen::Map<const RowMat> W(L.w.data(), static_cast<Eigen::Index>(L.cout), static_cast<Eigen::Index>(K));
    if (cache) cache->cols.assign(x.n, RowMat());
    RowMat col(K, P);
    for (std::size_t i = 0; i < x.n; ++i) {
        if (L.k == 1) {
            col = Eigen::Map<const RowMat>(x.sample(i), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        } else {
            detail::im2col(x.sample(i), L.cin, x.h, x.w, L.k, col.data());
        }
        Eigen::Map<RowMat> Y(y.sample(i), static_cast<Eigen::Index>(L.cout), static_cast<Eigen::Index>(P));
        detail::product(W, col, Y, false);
        for (std::size_t o = 0; o < L.cout; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += L.b[o];
        if (cache) cache->cols[i] = col;
    }
    return y;
}

/// Accumulates weight/bias gradients into gL and returns dL/dx.
inline Tensor conv_backward(const ConvLayer& L, const ConvCache& cache, const Tensor& dy, ConvLayer& gL) {
    const std::size_t K = L.fan_in(), P = dy.plane();
    const Eigen::Map<const RowMat> W(L.w.data(), static_cast<Eigen::Index>(L.cout), static_cast<Eigen::Index>(K));
    Eigen::Map<RowMat> dW(gL.w.data(), static_cast<Eigen::Index>(L.cout), static_cast<Eigen::Index>(K));
    Tensor dx(dy.n, L.cin, dy.h, dy.w);
    RowMat dcol(K, P);
    for (std::size_t i = 0; i < dy.n; ++i) {
        const Eigen::Map<const RowMat> dY(dy.sample(i), static_cast<Eigen::Index>(L.cout), static_cast<Eigen::Index>(P));
        detail::product(dY, cache.cols[i].transpose(), dW, true);
        for (std::size_t o = 0; o < L.cout; ++o) {
            const double* row = dy.sample(i) + o * P;
            double s = 0.0;
            for (std::size_t p = 0; p < P; ++p) s += row[p];
            gL.b[o] += s;
        }
        detail::product(W.transpose(), dY, dcol, false);
        if (L.k == 1) {
            Eigen::Map<RowMat>(dx.sample(i), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P)) = dcol;
        } else {
            detail::col2im(dcol.data(), L.cin, dy.h, dy.w, L.k, dx.sample(i));
        }
    }
    return dx;
}

// ---- batch normalization ----

struct BnCache {
    std::vector<double> xhat, inv_std;
    std::vector<double> batch_mean, batch_var;  // biased
    std::size_t count = 0;                      // reduction size N*H*W
};

/// Batch statistics when `cache` is given (training), running statistics otherwise.
inline Tensor bn_forward(const BatchNorm& B, const Tensor& x, double eps, BnCache* cache) {
    if (x.c != B.channels()) throw ShapeError("batch norm: channel mismatch");
    Tensor y(x.n, x.c, x.h, x.w);
    const std::size_t P = x.plane(), M = x.n * P;
    if (cache) {
        cache->xhat.resize(x.size());
        cache->inv_std.resize(x.c);
        cache->batch_mean.resize(x.c);
        cache->batch_var.resize(x.c);
        cache->count = M;
    }
    for (std::size_t c = 0; c < x.c; ++c) {
        double mu, var;
        if (cache) {
            double s = 0.0;
            for (std::size_t i = 0; i < x.n; ++i) {
                const double* p = x.sample(i) + c * P;
                for (std::size_t j = 0; j < P; ++j) s += p[j];
            }
            mu = s / static_cast<double>(M);
            double ss = 0.0;
            for (std::size_t i = 0; i < x.n; ++i) {
                const double* p = x.sample(i) + c * P;
                for (std::size_t j = 0; j < P; ++j) ss += (p[j] - mu) * (p[j] - mu);
            }
            var = ss / static_cast<double>(M);
            cache->batch_mean[c] = mu;
            cache->batch_var[c] = var;
        } else {
            mu = B.mean[c];
            var = B.var[c];
        }
        const double inv = 1.0 / std::sqrt(var + eps);
        if (cache) cache->inv_std[c] = inv;
        for (std::size_t i = 0; i < x.n; ++i) {
            const std::size_t o = i * x.c * P + c * P;
            for (std::size_t j = 0; j < P; ++j) {
                const double xh = (x.v[o + j] - mu) * inv;
                if (cache) cache->xhat[o + j] = xh;
                y.v[o + j] = B.gamma[c] * xh + B.beta[c];
            }
        }
    }
    return y;
}

inline Tensor bn_backward(const BatchNorm& B, const BnCache& cache, const Tensor& dy, BatchNorm& gB) {
    Tensor dx(dy.n, dy.c, dy.h, dy.w);
    const std::size_t P = dy.plane();
    const double M = static_cast<double>(cache.count);
    for (std::size_t c = 0; c < dy.c; ++c) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t i = 0; i < dy.n; ++i) {
            const std::size_t o = i * dy.c * P + c * P;
            for (std::size_t j = 0; j < P; ++j) {
                sum_dy += dy.v[o + j];
                sum_dy_xh += dy.v[o + j] * cache.xhat[o + j];
            }
        }
        gB.gamma[c] += sum_dy_xh;
        gB.beta[c] += sum_dy;
        const double g = B.gamma[c], inv = cache.inv_std[c];
        for (std::size_t i = 0; i < dy.n; ++i) {
            const std::size_t o = i * dy.c * P + c * P;
            for (std::size_t j = 0; j < P; ++j)
                dx.v[o + j] = g * inv / M * (M * dy.v[o + j] - sum_dy - cache.xhat[o + j] * sum_dy_xh);
        }
    }
    return dx;
}

/// running <- (1 - momentum) * running + momentum * batch, with the unbiased batch variance.
inline void bn_update_running(BatchNorm& B, const BnCache& cache, double momentum) {
    const double M = static_cast<double>(cache.count);
    const double unbias = M > 1.0 ? M / (M - 1.0) : 1.0;
    for (std::size_t c = 0; c < B.channels(); ++c) {
        B.mean[c] = (1.0 - momentum) * B.mean[c] + momentum * cache.batch_mean[c];
        B.var[c] = (1.0 - momentum) * B.var[c] + momentum * cache.batch_var[c] * unbias;
    }
}

// ---- ReLU ----

inline Tensor relu_forward(Tensor x) {
    for (double& a : x.v) a = a > 0.0 ? a : 0.0;
    return x;
}

inline Tensor relu_backward(const Tensor& out, Tensor dy) {
    for (std::size_t i = 0; i < dy.size(); ++i)
        if (!(out.v[i] > 0.0)) dy.v[i] = 0.0;
    return dy;
}

// ---- 2x2 max pooling with recorded indices ----

struct PoolIndices {
    std::size_t h = 0, w = 0;        // input plane
    std::vector<std::uint32_t> idx;  // per output element: flat position in the input plane
};

inline Tensor maxpool_forward(const Tensor& x, PoolIndices& ix) {
    if (x.h % 2 || x.w % 2) throw ShapeError("maxpool: odd plane " + shape_string(x));
    const std::size_t oh = x.h / 2, ow = x.w / 2;
    Tensor y(x.n, x.c, oh, ow);
    ix.h = x.h;
    ix.w = x.w;
    ix.idx.resize(y.size());
    for (std::size_t nc = 0; nc < x.n * x.c; ++nc) {
        const double* p = x.v.data() + nc * x.plane();
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t best = (2 * i) * x.w + 2 * j;
                for (std::size_t pos : {(2 * i) * x.w + 2 * j + 1, (2 * i + 1) * x.w + 2 * j, (2 * i + 1) * x.w + 2 * j + 1})
                    if (p[pos] > p[best]) best = pos;
                const std::size_t o = nc * oh * ow + i * ow + j;
                y.v[o] = p[best];
                ix.idx[o] = static_cast<std::uint32_t>(best);
            }
    }
    return y;
}

inline Tensor maxpool_backward(const Tensor& dy, const PoolIndices& ix) {
    Tensor dx(dy.n, dy.c, ix.h, ix.w);
    const std::size_t op = dy.plane(), ip = ix.h * ix.w;
    for (std::size_t nc = 0; nc < dy.n * dy.c; ++nc)
        for (std::size_t o = 0; o < op; ++o) dx.v[nc * ip + ix.idx[nc * op + o]] += dy.v[nc * op + o];
    return dx;
}

/// Places each value at its recorded position in a zero plane.
inline Tensor unpool_forward(const Tensor& x, const PoolIndices& ix) {
    if (x.h * 2 != ix.h || x.w * 2 != ix.w || ix.idx.size() != x.size())
        throw ShapeError("unpool: indices do not match input " + shape_string(x));
    Tensor y(x.n, x.c, ix.h, ix.w);
    const std::size_t op = x.plane(), ip = ix.h * ix.w;
    for (std::size_t nc = 0; nc < x.n * x.c; ++nc)
        for (std::size_t o = 0; o < op; ++o) y.v[nc * ip + ix.idx[nc * op + o]] = x.v[nc * op + o];
    return y;
}

inline Tensor unpool_backward(const Tensor& dy, const PoolIndices& ix) {
    Tensor dx(dy.n, dy.c, ix.h / 2, ix.w / 2);
    const std::size_t op = dx.plane(), ip = ix.h * ix.w;
    for (std::size_t nc = 0; nc < dx.n * dx.c; ++nc)
        for (std::size_t o = 0; o < op; ++o) dx.v[nc * op + o] = dy.v[nc * ip + ix.idx[nc * op + o]];
    return dx;
}

// ---- dropout ----

/// Mask entries are 0 or 1/(1-rate); an empty mask means identity.
inline std::vector<double> dropout_mask(std::size_t n, double rate, std::uint64_t seed) {
    if (rate <= 0.0) return {};
    std::vector<double> m(n);
    const double keep = 1.0 / (1.0 - rate);
    std::uint64_t state = seed;
    for (auto& x : m) {
        state = mix64(state);
        x = detail::unit_uniform(state) < rate ? 0.0 : keep;
    }
    return m;
}

inline Tensor apply_mask(Tensor x, const std::vector<double>& mask) {
    if (mask.empty()) return x;
    for (std::size_t i = 0; i < x.size(); ++i) x.v[i] *= mask[i];
    return x;
}

// ---- softmax cross-entropy ----

inline void softmax_pixels(const double* logits, std::size_t L, std::size_t P, std::size_t p, double* out) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < L; ++l) hi = std::max(hi, logits[l * P + p]);
    double s = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        out[l] = std::exp(logits[l * P + p] - hi);
        s += out[l];
    }
    for (std::size_t l = 0; l < L; ++l) out[l] /= s;
}

/// Mean over pixels of -log softmax(logits)[label]; writes dL/dlogits when `grad` is non-null.
inline double softmax_cross_entropy(const Tensor& logits, const std::vector<std::uint8_t>& labels, Tensor* grad) {
    const std::size_t L = logits.c, P = logits.plane();
    if (labels.size() != logits.n * P)
        throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(logits.n * P) +
                         " pixels");
    if (grad) *grad = Tensor(logits.n, L, logits.h, logits.w);
    const double inv_m = 1.0 / static_cast<double>(labels.size());
    std::vector<double> prob(L);
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.n; ++i) {
        const double* z = logits.sample(i);
        for (std::size_t p = 0; p < P; ++p) {
            const std::uint8_t t = labels[i * P + p];
            if (t >= L) throw ArgumentError("loss: label " + std::to_string(t) + " >= " + std::to_string(L) + " labels");
            double hi = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < L; ++l) hi = std::max(hi, z[l * P + p]);
            double s = 0.0;
            for (std::size_t l = 0; l < L; ++l) s += std::exp(z[l * P + p] - hi);
            loss += std::log(s) - (z[t * P + p] - hi);
            if (grad) {
                double* g = grad->sample(i);
                for (std::size_t l = 0; l < L; ++l) {
                    prob[l] = std::exp(z[l * P + p] - hi) / s;
                    g[l * P + p] = (prob[l] - (l == t ? 1.0 : 0.0)) * inv_m;
                }
            }
        }
    }
    return loss * inv_m;
}

}  // namespace bseg::net
