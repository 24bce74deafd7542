#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bseg/densecrf/densecrf.hpp"
#include "bseg/phantom/phantom.hpp"
#include "bseg/preprocess/preprocess.hpp"

using namespace bseg;
using namespace bseg::crf;

namespace {

PointFeatures random_points(std::size_t n, std::size_t dim, double side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, side);
    PointFeatures f(n, dim);
    for (auto& x : f.data) x = u(rng);
    return f;
}

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

double rel_l2(const std::vector<double>& got, const std::vector<double>& want) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num += (got[i] - want[i]) * (got[i] - want[i]);
        den += want[i] * want[i];
    }
    return std::sqrt(num / den);
}

ProbVolume two_label(const Grid& g, const std::vector<double>& p1) {
    std::vector<double> d(p1.size() * 2);
    for (std::size_t i = 0; i < p1.size(); ++i) {
        d[2 * i] = 1.0 - p1[i];
        d[2 * i + 1] = p1[i];
    }
    return ProbVolume(g, 2, std::move(d));
}

// Literal energy written out independently of gibbs_energy.
double oracle_energy(const std::vector<std::uint8_t>& x, const UnaryField& u, const FeatureSet& f,
                     const CrfParams& p) {
    double e = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) e += u(i, x[i]);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) {
            if (j <= i || x[i] == x[j]) continue;
            double da = 0.0, ds = 0.0;
            for (int k = 0; k < 4; ++k) da += std::pow(f.appearance.point(i)[k] - f.appearance.point(j)[k], 2);
            for (int k = 0; k < 3; ++k) ds += std::pow(f.smoothness.point(i)[k] - f.smoothness.point(j)[k], 2);
            e += p.w1 * std::exp(-da / 2.0) + p.w2 * std::exp(-ds / 2.0);
        }
    return e;
}

}  // namespace

TEST(CrfParams, DefaultsAndValidation) {
    const CrfParams p;
    EXPECT_EQ(p.w1, 3.0);
    EXPECT_EQ(p.w2, 1.0);
    EXPECT_EQ(p.theta_alpha, 4.0);
    EXPECT_EQ(p.theta_beta, 1.0);
    EXPECT_EQ(p.theta_gamma, 4.0);
    EXPECT_EQ(p.iterations, 5u);
    EXPECT_EQ(p.unary_floor, 1e-10);
    CrfParams bad;
    bad.theta_beta = 0.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = CrfParams{};
    bad.w1 = -1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Unary, FromProb) {
    const auto g = make_grid({3, 1, 1});
    const ProbVolume p(g, 2, {1.0, 0.0, std::exp(-1.0), 1.0 - std::exp(-1.0), 0.5, 0.5});
    const auto u = unary_from_prob(p, 1e-10);
    EXPECT_EQ(u(0, 0), 0.0);
    EXPECT_FALSE(std::signbit(u(0, 0)));
    EXPECT_NEAR(u(0, 1), 23.025850929940457, 1e-12);
    EXPECT_DOUBLE_EQ(u(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(u(2, 1), std::log(2.0));
}

TEST(NaiveFilter, Fixtures) {
    const PointFeatures same(2, 3, {0.1, 0.2, 0.3, 0.1, 0.2, 0.3});
    const std::vector<double> ab{2.5, -1.0};
    EXPECT_EQ(gaussian_filter_naive(ab, 1, same), (std::vector<double>{-1.0, 2.5}));

    const PointFeatures far(2, 1, {0.0, 1e6});
    EXPECT_EQ(gaussian_filter_naive(ab, 1, far), (std::vector<double>{0.0, 0.0}));

    const PointFeatures line(3, 1, {0.0, 1.0, 2.0});
    const auto out = gaussian_filter_naive(std::vector<double>{1.0, 0.0, 0.0}, 1, line);
    EXPECT_EQ(out[0], 0.0);
    EXPECT_DOUBLE_EQ(out[1], std::exp(-0.5));
    EXPECT_DOUBLE_EQ(out[2], std::exp(-2.0));
}

TEST(NaiveFilter, CapRefusal) {
    const PointFeatures f(11, 2);
    const std::vector<double> v(11, 1.0);
    try {
        gaussian_filter_naive(v, 1, f, 10);
        FAIL() << "expected refusal";
    } catch (const CapacityError& e) {
        EXPECT_NE(std::string(e.what()).find("fast"), std::string::npos);
    }
}

TEST(FastFilter, MatchesNaiveOnRandomPoints) {
    for (std::size_t dim : {3u, 4u})
        for (double side : {2.0, 4.0, 8.0})
            for (std::uint64_t seed = 0; seed < 3; ++seed) {
                const auto f = random_points(500, dim, side, 100 * dim + seed);
                const auto v = random_values(500, seed + 7);
                const double err = rel_l2(gaussian_filter_fast(v, 1, f), gaussian_filter_naive(v, 1, f));
                EXPECT_LE(err, 0.05) << "dim " << dim << " side " << side << " seed " << seed;
            }
}

TEST(FastFilter, LargeInstanceMultiChannel) {
    const std::size_t n = 10000;
    for (std::size_t dim : {3u, 4u}) {
        const auto f = random_points(n, dim, 8.0, 9 + dim);
        auto v = random_values(2 * n, 10 + dim);
        const auto fast = gaussian_filter_fast(v, 2, f);
        const auto naive = gaussian_filter_naive(v, 2, f, n);
        EXPECT_LE(rel_l2(fast, naive), 0.05) << "dim " << dim;
    }
}

TEST(FastFilter, ConstantFieldAfterDegreeNormalization) {
    // voxel-grid features as the CRF builds them
    const Dims d{12, 10, 8};
    PointFeatures f(d.size(), 3);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto q = d.unflatten(i);
        for (int k = 0; k < 3; ++k) f.point(i)[k] = double(q[k]) / 4.0;
    }
    const std::vector<double> c(d.size(), 0.37), ones(d.size(), 1.0);
    const auto out = gaussian_filter_fast(c, 1, f);
    const auto deg = gaussian_filter_naive(ones, 1, f);
    double worst = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) worst = std::max(worst, std::abs(out[i] / deg[i] - 0.37) / 0.37);
    EXPECT_LT(worst, 0.05);
}

TEST(FastFilter, PermutationOfPoints) {
    const std::size_t n = 400;
    const auto f = random_points(n, 4, 4.0, 3);
    const auto v = random_values(n, 4);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
    PointFeatures fp(n, 4);
    std::vector<double> vp(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::copy_n(f.point(perm[k]), 4, fp.point(k));
        vp[k] = v[perm[k]];
    }
    const auto a = gaussian_filter_fast(v, 1, f), b = gaussian_filter_fast(vp, 1, fp);
    // same lattice and weights; only the floating-point accumulation order differs
    for (std::size_t k = 0; k < n; ++k) EXPECT_NEAR(b[k], a[perm[k]], 1e-12 * (1.0 + std::abs(a[perm[k]])));
}

TEST(FastFilter, DimensionLimit) {
    EXPECT_THROW(PermutohedralLattice(PointFeatures(4, 9)), UnsupportedError);
    EXPECT_NO_THROW(PermutohedralLattice(PointFeatures(4, 8)));
}

TEST(MeanField, UnaryOnlyLimit) {
    const auto g = make_grid({4, 3, 2});
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::vector<double> p(g.size()), q0(g.size());
    for (auto& x : p) x = u(rng);
    for (auto& x : q0) x = u(rng);
    const auto probs = two_label(g, p);
    const auto image = Volume3D(g, std::vector<double>(g.size(), 0.5));
    CrfParams params;
    params.w1 = params.w2 = 0.0;
    const auto unary = unary_from_prob(probs);
    const auto f = make_features(image, params);
    const auto q1 = meanfield_step(two_label(g, q0), unary, f, params);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(q1.prob(i, 1), p[i], 1e-12);

    params.iterations = 3;
    const auto r = infer(probs, image, params);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(r.probs.prob(i, 1), p[i], 1e-12);
}

TEST(MeanField, SingleVoxel) {
    const auto g = make_grid({1, 1, 1});
    const auto probs = two_label(g, {0.3});
    const auto f = make_features(Volume3D(g, {0.4}), CrfParams{});
    const auto exact = meanfield_step(two_label(g, {0.9}), unary_from_prob(probs), f, CrfParams{}, FilterKind::naive);
    EXPECT_NEAR(exact.prob(0, 1), 0.3, 1e-12);
    // the lattice only approximates the self weight it subtracts
    const auto fast = meanfield_step(two_label(g, {0.9}), unary_from_prob(probs), f, CrfParams{});
    EXPECT_NEAR(fast.prob(0, 1), 0.3, 0.01);
}

// Three voxels in a row, two labels. Messages written out with the degree-normalized kernels.
TEST(MeanField, HandComputedThreeVoxels) {
    const auto g = make_grid({3, 1, 1});
    CrfParams p;
    p.theta_alpha = 1.0;
    p.theta_beta = 0.5;
    p.theta_gamma = 2.0;
    p.w1 = 2.0;
    p.w2 = 1.5;
    const Volume3D image(g, {0.2, 0.6, 0.5});
    const std::vector<double> p1{0.8, 0.4, 0.3}, q1{0.7, 0.2, 0.5};
    const auto unary = unary_from_prob(two_label(g, p1));
    const auto f = make_features(image, p);
    const auto got = meanfield_step(two_label(g, q1), unary, f, p, FilterKind::naive);

    const double x[3] = {0, 1, 2}, I[3] = {0.2, 0.6, 0.5};
    double ka[3][3], ks[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double dx = x[i] - x[j], di = I[i] - I[j];
            ka[i][j] = std::exp(-dx * dx / 2.0 - di * di / (2.0 * 0.25));
            ks[i][j] = std::exp(-dx * dx / (2.0 * 4.0));
        }
    const auto normalized = [](double k[3][3], int i, int j) {
        double di = 0.0, dj = 0.0;
        for (int t = 0; t < 3; ++t) {
            di += k[i][t];
            dj += k[j][t];
        }
        return k[i][j] / std::sqrt(di * dj);
    };
    for (int i = 0; i < 3; ++i) {
        double m[2] = {0.0, 0.0};
        for (int j = 0; j < 3; ++j) {
            if (j == i) continue;
            const double w = 2.0 * normalized(ka, i, j) + 1.5 * normalized(ks, i, j);
            m[0] += w * (1.0 - q1[j]);
            m[1] += w * q1[j];
        }
        const double e0 = std::exp(std::log(1.0 - p1[i]) - m[1]);
        const double e1 = std::exp(std::log(p1[i]) - m[0]);
        EXPECT_NEAR(got.prob(i, 1), e1 / (e0 + e1), 1e-12) << "voxel " << i;
    }
}

TEST(MeanField, OutputsStayOnSimplex) {
    const Dims d{6, 5, 4};
    const auto g = make_grid(d);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> pr(d.size() * 3), im(d.size());
    for (auto& x : pr) x = u(rng);
    renormalize_simplex(pr, 3);
    for (auto& x : im) x = u(rng);
    const ProbVolume probs(g, 3, pr);
    const Volume3D image(g, im);
    const auto unary = unary_from_prob(probs);
    for (auto kind : {FilterKind::fast, FilterKind::naive}) {
        const auto f = make_features(image, CrfParams{});
        ProbVolume q = probs;
        for (int it = 0; it < 4; ++it) {
            q = meanfield_step(q, unary, f, CrfParams{}, kind);
            for (std::size_t i = 0; i < d.size(); ++i) {
                double s = 0.0;
                for (unsigned l = 0; l < 3; ++l) s += q.prob(i, l);
                EXPECT_NEAR(s, 1.0, 1e-12);
            }
        }
    }
}

TEST(Infer, ZeroIterationsIsIdentity) {
    const auto g = make_grid({5, 4, 3});
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> p(g.size());
    for (auto& x : p) x = u(rng);
    const auto probs = two_label(g, p);
    CrfParams params;
    params.iterations = 0;
    const auto r = infer(probs, Volume3D(g, std::vector<double>(g.size(), 0.3)), params);
    EXPECT_EQ(r.probs, probs);
    EXPECT_EQ(r.labels, probs.argmax());
}

TEST(Infer, ConsensusFixedPoint) {
    const auto g = make_grid({10, 9, 8});
    const auto r = infer(two_label(g, std::vector<double>(g.size(), 0.99)),
                         Volume3D(g, std::vector<double>(g.size(), 0.5)), CrfParams{});
    EXPECT_EQ(r.labels.count(1), g.size());
}

TEST(Infer, RejectsMismatchAndUnnormalizedImage) {
    const auto g = make_grid({3, 3, 3});
    const auto probs = two_label(g, std::vector<double>(27, 0.5));
    EXPECT_THROW(infer(probs, Volume3D(make_grid({3, 3, 4}), std::vector<double>(36, 0.5)), CrfParams{}), ShapeError);
    EXPECT_THROW(infer(probs, Volume3D(g, std::vector<double>(27, 2.0)), CrfParams{}), ArgumentError);
}

TEST(Infer, RemovesFalsePositiveIslandOnPhantom) {
    phantom::PhantomConfig cfg;
    cfg.seed = 3;
    const auto ph = phantom::generate(cfg);
    const auto image = normalize_intensity(ph.image);
    std::vector<double> p1(ph.mask.size());
    for (std::size_t i = 0; i < p1.size(); ++i) p1[i] = ph.mask[i] ? 0.95 : 0.05;
    // isolated wrong-label voxel in confident background, between brain and skull
    const std::size_t island = ph.mask.dims().index({32, 28, 4});
    ASSERT_EQ(ph.mask[island], 0);
    p1[island] = 0.6;
    const auto probs = two_label(ph.mask.grid(), p1);
    ASSERT_EQ(probs.argmax()[island], 1);
    const auto r = infer(probs, image, CrfParams{});
    EXPECT_EQ(r.labels[island], 0);
    EXPECT_EQ(r.labels, ph.mask);
}

TEST(Infer, IslandRemovalLowersEnergyOnCrop) {
    const Dims d{9, 9, 9};
    const auto g = make_grid(d);
    std::vector<double> p1(d.size(), 0.05);
    const std::size_t c = d.index({4, 4, 4});
    p1[c] = 0.6;
    const auto probs = two_label(g, p1);
    const Volume3D image(g, std::vector<double>(d.size(), 0.2));
    const CrfParams params;
    const auto r = infer(probs, image, params, FilterKind::naive);
    EXPECT_EQ(r.labels.count(1), 0u);
    const auto unary = unary_from_prob(probs);
    const auto f = make_features(image, params);
    EXPECT_LT(gibbs_energy(r.labels, unary, f, params), gibbs_energy(probs.argmax(), unary, f, params));
}

TEST(Infer, LabelPermutationEquivariance) {
    const Dims d{7, 6, 5};
    const auto g = make_grid(d);
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> p(d.size()), im(d.size());
    for (auto& x : p) x = u(rng);
    for (auto& x : im) x = u(rng);
    const Volume3D image(g, im);
    std::vector<double> swapped(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) swapped[i] = 1.0 - p[i];
    const auto a = infer(two_label(g, p), image, CrfParams{});
    const auto b = infer(two_label(g, swapped), image, CrfParams{});
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_NEAR(a.probs.prob(i, 0), b.probs.prob(i, 1), 1e-12);
        if (a.probs.prob(i, 0) != a.probs.prob(i, 1)) {
            EXPECT_NE(a.labels[i], b.labels[i]);
        }
    }

    // three labels, cyclic relabeling
    std::vector<double> p3(d.size() * 3), q3(d.size() * 3);
    for (auto& x : p3) x = u(rng);
    renormalize_simplex(p3, 3);
    for (std::size_t i = 0; i < d.size(); ++i)
        for (unsigned l = 0; l < 3; ++l) q3[i * 3 + (l + 1) % 3] = p3[i * 3 + l];
    const auto c3 = infer(ProbVolume(g, 3, p3), image, CrfParams{});
    const auto d3 = infer(ProbVolume(g, 3, q3), image, CrfParams{});
    for (std::size_t i = 0; i < d.size(); ++i)
        for (unsigned l = 0; l < 3; ++l) EXPECT_NEAR(c3.probs.prob(i, l), d3.probs.prob(i, (l + 1) % 3), 1e-12);
}

TEST(Gibbs, SameLabelIsUnarySum) {
    const auto g = make_grid({3, 3, 2});
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::vector<double> p(g.size()), im(g.size());
    for (auto& x : p) x = u(rng);
    for (auto& x : im) x = u(rng);
    const auto unary = unary_from_prob(two_label(g, p));
    const auto f = make_features(Volume3D(g, im), CrfParams{});
    for (std::uint8_t lab : {0, 1}) {
        const LabelVolume x(g, std::vector<std::uint8_t>(g.size(), lab), 2);
        double want = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) want += unary(i, lab);
        EXPECT_EQ(gibbs_energy(x, unary, f, CrfParams{}), want);
    }
}

TEST(Gibbs, TwoVoxelsDifferentLabels) {
    const auto g = make_grid({2, 1, 1});
    const auto unary = unary_from_prob(two_label(g, {0.3, 0.8}));
    FeatureSet f{PointFeatures(2, 4, {0.0, 0.0, 0.0, 0.1, 0.5, 0.0, 0.0, 0.4}),
                 PointFeatures(2, 3, {0.0, 0.0, 0.0, 0.25, 0.0, 0.0})};
    const LabelVolume x(g, {0, 1}, 2);
    const CrfParams p;
    const double want = -std::log(0.7) - std::log(0.8) + 3.0 * std::exp(-(0.25 + 0.09) / 2.0) +
                        1.0 * std::exp(-0.0625 / 2.0);
    EXPECT_NEAR(gibbs_energy(x, unary, f, p), want, 1e-12);
}

TEST(Gibbs, InvariantToVoxelOrder) {
    const std::size_t n = 10;
    const auto g = make_grid({n, 1, 1});
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::vector<double> p(n);
    for (auto& x : p) x = u(rng);
    FeatureSet f{random_points(n, 4, 2.0, 1), random_points(n, 3, 2.0, 2)};
    std::vector<std::uint8_t> lab(n);
    for (auto& l : lab) l = u(rng) > 0.5;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    FeatureSet fp{PointFeatures(n, 4), PointFeatures(n, 3)};
    std::vector<double> pp(n);
    std::vector<std::uint8_t> lp(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::copy_n(f.appearance.point(perm[k]), 4, fp.appearance.point(k));
        std::copy_n(f.smoothness.point(perm[k]), 3, fp.smoothness.point(k));
        pp[k] = p[perm[k]];
        lp[k] = lab[perm[k]];
    }
    const CrfParams params;
    const double a = gibbs_energy(LabelVolume(g, lab, 2), unary_from_prob(two_label(g, p)), f, params);
    const double b = gibbs_energy(LabelVolume(g, lp, 2), unary_from_prob(two_label(g, pp)), fp, params);
    EXPECT_NEAR(a, b, 1e-12 * a);
}

TEST(ExactMap, DecoupledIsUnaryArgmin) {
    const auto g = make_grid({3, 3, 1});
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::vector<double> p(g.size());
    for (auto& x : p) x = u(rng);
    const auto probs = two_label(g, p);
    CrfParams params;
    params.w1 = params.w2 = 0.0;
    const auto f = make_features(Volume3D(g, std::vector<double>(g.size(), 0.5)), params);
    EXPECT_EQ(exact_map_bruteforce(unary_from_prob(probs), f, params), probs.argmax());
}

TEST(ExactMap, AttractionWins) {
    const auto g = make_grid({2, 1, 1});
    const auto unary = unary_from_prob(two_label(g, {0.45, 0.6}));
    FeatureSet f{PointFeatures(2, 4), PointFeatures(2, 3)};
    const auto x = exact_map_bruteforce(unary, f, CrfParams{});
    // totals: all-0 = -ln .55 - ln .4, all-1 = -ln .45 - ln .6; the latter is lower
    EXPECT_EQ(x[0], 1);
    EXPECT_EQ(x[1], 1);
}

TEST(ExactMap, MatchesIndependentSearchOnRandomInstances) {
    const auto g = make_grid({3, 3, 1});
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.02, 0.98);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> p(9), im(9);
        for (auto& x : p) x = u(rng);
        for (auto& x : im) x = u(rng);
        CrfParams params;
        params.w1 = u(rng) * 2.0;
        params.w2 = u(rng) * 2.0;
        params.theta_alpha = 0.5 + 2.0 * u(rng);
        params.theta_gamma = 0.5 + 2.0 * u(rng);
        const auto unary = unary_from_prob(two_label(g, p));
        const auto f = make_features(Volume3D(g, im), params);
        double best = std::numeric_limits<double>::infinity();
        std::vector<std::uint8_t> arg;
        for (int s = 0; s < 512; ++s) {
            std::vector<std::uint8_t> x(9);
            for (int k = 0; k < 9; ++k) x[k] = (s >> (8 - k)) & 1;
            const double e = oracle_energy(x, unary, f, params);
            if (s == 0 || e < best - 1e-12 * (1.0 + std::abs(best))) {
                best = e;
                arg = x;
            }
        }
        const auto got = exact_map_bruteforce(unary, f, params);
        EXPECT_EQ(std::vector<std::uint8_t>(got.data().begin(), got.data().end()), arg) << "trial " << trial;
        EXPECT_NEAR(gibbs_energy(got, unary, f, params), best, 1e-9);
    }
}

TEST(ExactMap, StateSpaceRefusal) {
    const auto g = make_grid({21, 1, 1});
    const auto unary = unary_from_prob(two_label(g, std::vector<double>(21, 0.5)));
    const auto f = make_features(Volume3D(g, std::vector<double>(21, 0.5)), CrfParams{});
    try {
        exact_map_bruteforce(unary, f, CrfParams{});
        FAIL();
    } catch (const CapacityError& e) {
        EXPECT_NE(std::string(e.what()).find("2^21"), std::string::npos);
    }
}
