#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "bseg/volume/nifti.hpp"
#include "test_util.hpp"

namespace bseg {
namespace {

using testing::TempDir;

std::vector<char> minimal_header(std::int16_t datatype, std::int16_t bitpix, Dims d) {
    std::vector<char> buf(352, 0);
    auto put16 = [&](std::size_t pos, std::int16_t v) { std::memcpy(buf.data() + pos, &v, 2); };
    auto put32 = [&](std::size_t pos, std::int32_t v) { std::memcpy(buf.data() + pos, &v, 4); };
    auto putf = [&](std::size_t pos, float v) { std::memcpy(buf.data() + pos, &v, 4); };
    put32(0, 348);
    put16(40, 3);
    put16(42, static_cast<std::int16_t>(d.nx));
    put16(44, static_cast<std::int16_t>(d.ny));
    put16(46, static_cast<std::int16_t>(d.nz));
    put16(48, 1);
    put16(70, datatype);
    put16(72, bitpix);
    for (int k = 1; k <= 3; ++k) putf(76 + 4 * k, 1.0f);
    putf(108, 352.0f);
    std::memcpy(buf.data() + 344, "n+1\0", 4);
    return buf;
}

TEST(Nifti, MinimalZeroFloatVolume) {
    auto buf = minimal_header(16, 32, {2, 2, 2});
    buf.resize(352 + 32, 0);
    const auto img = nifti::decode(buf);
    EXPECT_EQ(img.grid.dims, (Dims{2, 2, 2}));
    const auto vol = img.to_volume();
    for (double v : vol.data()) EXPECT_EQ(v, 0.0);
}

TEST(Nifti, WrittenZeroVolumeHasExactSize) {
    TempDir tmp("nifti");
    const auto vol = Volume3D::filled(make_grid({2, 2, 2}), 0.0);
    nifti::write(vol, tmp / "z.nii");
    EXPECT_EQ(std::filesystem::file_size(tmp / "z.nii"), 352u + 32u);
}

TEST(Nifti, LabelVolumeWrittenAsUInt8) {
    TempDir tmp("nifti");
    const auto m = testing::random_mask({3, 3, 3}, 5);
    nifti::write(m, tmp / "m.nii");
    std::ifstream in(tmp / "m.nii", std::ios::binary);
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), {});
    std::int16_t code = 0;
    std::memcpy(&code, buf.data() + 70, 2);
    EXPECT_EQ(code, 2);
    EXPECT_EQ(buf.size(), 352u + 27u);
    EXPECT_EQ(nifti::read_labels(tmp / "m.nii", 2), m);
}

TEST(Nifti, Float32RoundTripIsBitExact) {
    TempDir tmp("nifti");
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto vol = testing::random_volume({5 + seed, 4, 3}, seed, {0.5, 0.75, 1.25});
        nifti::write(vol, tmp / "v.nii");
        const auto back = nifti::read_volume(tmp / "v.nii");
        EXPECT_EQ(back.dims(), vol.dims());
        EXPECT_EQ(back.spacing(), vol.spacing());
        ASSERT_EQ(back.size(), vol.size());
        EXPECT_EQ(0, std::memcmp(back.data().data(), vol.data().data(), vol.size() * sizeof(double)));
    }
}

TEST(Nifti, OrientationPassesThrough) {
    TempDir tmp("nifti");
    Grid g = make_grid({2, 2, 2});
    g.orientation.sform_code = 1;
    g.orientation.srow[0] = {0.5f, 0.0f, 0.0f, -10.0f};
    g.orientation.srow[1] = {0.0f, 0.5f, 0.0f, 3.0f};
    g.orientation.srow[2] = {0.0f, 0.0f, 0.5f, 7.0f};
    g.orientation.qfac = -1.0f;
    nifti::write(Volume3D::filled(g, 1.0), tmp / "o.nii");
    EXPECT_EQ(nifti::read(tmp / "o.nii").grid.orientation, g.orientation);
}

TEST(Nifti, ProbChannelsSurviveSerialization) {
    TempDir tmp("nifti");
    const Grid g = make_grid({3, 2, 2});
    std::vector<double> d;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double p = u(rng);
        d.push_back(1.0 - p);
        d.push_back(p);
    }
    const ProbVolume probs(g, 2, d);
    nifti::write_channel(probs, 0, tmp / "p0.nii");
    nifti::write_channel(probs, 1, tmp / "p1.nii");
    const auto back = ProbVolume::from_channels(
        {nifti::read_volume(tmp / "p0.nii"), nifti::read_volume(tmp / "p1.nii")});
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(back.prob(i, 0) + back.prob(i, 1), 1.0, 1e-6);
}

TEST(Nifti, ScalingIsApplied) {
    auto buf = minimal_header(2, 8, {2, 1, 1});
    const float slope = 2.0f, inter = -1.0f;
    std::memcpy(buf.data() + 112, &slope, 4);
    std::memcpy(buf.data() + 116, &inter, 4);
    buf.push_back(3);
    buf.push_back(5);
    const auto img = nifti::decode(buf);
    EXPECT_EQ(img.values, (std::vector<double>{5.0, 9.0}));
}

TEST(Nifti, Int16AndFloat64Read) {
    auto b16 = minimal_header(4, 16, {2, 1, 1});
    const std::int16_t v16[2] = {-7, 300};
    b16.insert(b16.end(), reinterpret_cast<const char*>(v16), reinterpret_cast<const char*>(v16) + 4);
    EXPECT_EQ(nifti::decode(b16).values, (std::vector<double>{-7.0, 300.0}));

    auto b64 = minimal_header(64, 64, {1, 1, 1});
    const double v64 = 0.1;
    b64.insert(b64.end(), reinterpret_cast<const char*>(&v64), reinterpret_cast<const char*>(&v64) + 8);
    EXPECT_EQ(nifti::decode(b64).values.front(), 0.1);
}

TEST(Nifti, RejectsBadSizeofHdr) {
    auto buf = minimal_header(16, 32, {1, 1, 1});
    buf.resize(356, 0);
    const std::int32_t bad = 540;
    std::memcpy(buf.data(), &bad, 4);
    try {
        nifti::decode(buf);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
}

TEST(Nifti, RejectsBadMagicTruncationAndDatatype) {
    auto buf = minimal_header(16, 32, {1, 1, 1});
    buf.resize(356, 0);
    auto bad_magic = buf;
    std::memcpy(bad_magic.data() + 344, "ni1\0", 4);
    EXPECT_THROW(nifti::decode(bad_magic), FormatError);

    auto truncated = buf;
    truncated.resize(354);
    EXPECT_THROW(nifti::decode(truncated), FormatError);
    EXPECT_THROW(nifti::decode(std::vector<char>(100, 0)), FormatError);

    auto rgb = minimal_header(128, 24, {1, 1, 1});
    rgb.resize(355, 0);
    try {
        nifti::decode(rgb);
        FAIL() << "expected UnsupportedError";
    } catch (const UnsupportedError& e) {
        EXPECT_NE(std::string(e.what()).find("unsupported datatype code 128"), std::string::npos);
    }
}

TEST(Nifti, DimensionalityChecks) {
    auto four_d = minimal_header(2, 8, {2, 2, 2});
    const std::int16_t nd = 4, t = 1, t2 = 2;
    std::memcpy(four_d.data() + 40, &nd, 2);
    std::memcpy(four_d.data() + 48, &t, 2);
    four_d.resize(352 + 8, 0);
    EXPECT_NO_THROW(nifti::decode(four_d));  // trailing singleton squeezed

    auto real_4d = four_d;
    std::memcpy(real_4d.data() + 48, &t2, 2);
    real_4d.resize(352 + 16, 0);
    EXPECT_THROW(nifti::decode(real_4d), ShapeError);

    auto two_d = minimal_header(2, 8, {2, 2, 1});
    const std::int16_t two = 2;
    std::memcpy(two_d.data() + 40, &two, 2);
    two_d.resize(352 + 4, 0);
    EXPECT_THROW(nifti::decode(two_d), ShapeError);
}

TEST(Nifti, UnwritablePathReportsPath) {
    const auto vol = Volume3D::filled(make_grid({1, 1, 1}), 0.0);
    try {
        nifti::write(vol, "/nonexistent_dir_xyz/out.nii");
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent_dir_xyz/out.nii"), std::string::npos);
    }
}

}  // namespace
}  // namespace bseg
