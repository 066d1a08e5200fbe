#include "putt/grid_io.hpp"
#include "putt/pyramid.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

using namespace putt;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("putt_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::create_directories(dir);
    return dir;
}

Grid random_grid(std::vector<std::size_t> dims, std::uint64_t seed) {
    Grid g(std::move(dims));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : g.values) v = u(rng);
    return g;
}

double max_abs_diff(const Grid& a, const Grid& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
    return m;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

} // namespace

TEST(GridIo, PgmRoundTripWithinSixteenBitQuantization) {
    const auto dir = temp_dir();
    const Grid g = random_grid({32, 32}, 1);
    save_grid(g, dir / "a.pgm");
    const Grid back = load_grid(dir / "a.pgm");
    EXPECT_EQ(back.dims, g.dims);
    EXPECT_LE(max_abs_diff(g, back), 1.0 / 65535.0);
}

TEST(GridIo, VolumeRoundTripWithinFloatPrecision) {
    const auto dir = temp_dir();
    const Grid g = random_grid({8, 8, 8}, 2);
    save_grid(g, dir / "v.f32");
    ASSERT_TRUE(std::filesystem::exists(dir / "v.f32.json"));
    const Grid back = load_grid(dir / "v.f32");
    EXPECT_EQ(back.dims, g.dims);
    EXPECT_LE(max_abs_diff(g, back), 1e-7);
}

TEST(GridIo, RejectsNonPowerOfTwoImage) {
    const auto dir = temp_dir();
    detail::write_pgm(dir / "odd.pgm", 33, 32, std::vector<double>(33 * 32, 0.5), 255);
    EXPECT_THROW((void)load_grid(dir / "odd.pgm"), FormatError);
}

TEST(GridIo, ReportsMissingAndMalformedFiles) {
    const auto dir = temp_dir();
    EXPECT_THROW((void)load_grid(dir / "none.pgm"), IoError);
    EXPECT_THROW((void)load_grid(dir / "none.f32"), IoError);
    std::ofstream(dir / "bad.pgm") << "P2\n2 2\n255\n0 0 0 0\n";
    EXPECT_THROW((void)load_grid(dir / "bad.pgm"), FormatError);
    std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\n" << std::string(5, 'x');
    EXPECT_THROW((void)load_grid(dir / "short.pgm"), FormatError);
    EXPECT_THROW((void)load_grid(dir / "x.tiff"), FormatError);
}

TEST(GridIo, PpmIsConvertedToLuma) {
    const auto dir = temp_dir();
    {
        std::ofstream os(dir / "c.ppm", std::ios::binary);
        os << "P6\n2 2\n255\n";
        const unsigned char px[12] = {255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255};
        os.write(reinterpret_cast<const char*>(px), 12);
    }
    const Grid g = load_grid(dir / "c.ppm");
    EXPECT_NEAR(g.values[0], 0.299, 1e-12);
    EXPECT_NEAR(g.values[1], 0.587, 1e-12);
    EXPECT_NEAR(g.values[2], 0.114, 1e-12);
    EXPECT_NEAR(g.values[3], 1.0, 1e-12);
}

TEST(GridIo, MaskRoundTrip) {
    const auto dir = temp_dir();
    const auto mask = random_mask({16, 16}, 0.3, 4);
    save_mask(mask, 16, 16, dir / "m.pgm");
    EXPECT_EQ(load_mask(dir / "m.pgm"), mask);
}

TEST(DownsampleAvg, BlockMean) {
    const Grid g({2, 2}, std::vector<double>{1, 3, 5, 7});
    const Grid c = downsample_avg(g);
    ASSERT_EQ(c.dims, (std::vector<std::size_t>{1, 1}));
    EXPECT_EQ(c.values[0], 4.0);
}

TEST(DownsampleAvg, ConstantAndMeanPreserving) {
    const Grid k({8, 8, 8}, 0.25);
    for (double v : downsample_avg(k).values) EXPECT_EQ(v, 0.25);
    const Grid g = random_grid({16, 16}, 5);
    EXPECT_NEAR(mean(downsample_avg(g).values), mean(g.values), 1e-15);
    const Grid h = random_grid({8, 8, 8}, 6);
    EXPECT_NEAR(mean(downsample_avg(h).values), mean(h.values), 1e-15);
}

TEST(DownsampleAvg, BlocksFollowRowMajorLayout) {
    Grid g({4, 4});
    std::iota(g.values.begin(), g.values.end(), 0.0);
    const Grid c = downsample_avg(g);
    // top-left block {0,1,4,5}, top-right {2,3,6,7}
    EXPECT_EQ(c.values, (std::vector<double>{2.5, 4.5, 10.5, 12.5}));
}

TEST(MaskedAvgPool, AveragesObservedCellsOnly) {
    Grid g({2, 2}, std::vector<double>{2, 2, 0, 0});
    g.mask = std::vector<std::uint8_t>{1, 1, 0, 0};
    const Grid c = masked_avg_pool(g);
    EXPECT_EQ(c.values[0], 2.0);
    EXPECT_EQ((*c.mask)[0], 1);
}

TEST(MaskedAvgPool, FullyObservedEqualsDownsampleAndEmptyBlockIsUnobserved) {
    Grid g = random_grid({8, 8}, 7);
    g.mask = std::vector<std::uint8_t>(64, 1);
    EXPECT_EQ(masked_avg_pool(g).values, downsample_avg(g).values);
    // clear the top-left block
    for (std::size_t i : {0, 1, 8, 9}) (*g.mask)[i] = 0;
    const Grid c = masked_avg_pool(g);
    EXPECT_EQ(c.values[0], 0.0);
    EXPECT_EQ((*c.mask)[0], 0);
    EXPECT_EQ(c.observed_count(), 15u);
    Grid plain = random_grid({4, 4}, 8);
    EXPECT_THROW((void)masked_avg_pool(plain), InvalidArgument);
}

TEST(BuildPyramid, LevelsAndSides) {
    const Grid g = random_grid({16, 16}, 9);
    const auto p0 = build_pyramid(g, 0);
    ASSERT_EQ(p0.size(), 1u);
    EXPECT_EQ(p0[0], g);
    const auto p = build_pyramid(Grid({512, 512}), 2);
    ASSERT_EQ(p.size(), 3u);
    EXPECT_EQ(p[0].dims[0], 128u);
    EXPECT_EQ(p[1].dims[0], 256u);
    EXPECT_EQ(p[2].dims[0], 512u);
    EXPECT_THROW((void)build_pyramid(g, 4), InvalidArgument);
    EXPECT_THROW((void)build_pyramid(g, -1), InvalidArgument);
}

// counting oracle: a coarse cell is observed iff any fine cell in its block is
TEST(BuildPyramid, ObservedFractionGrowsTowardCoarseLevels) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Grid g = random_grid({64, 64}, seed);
        g.mask = random_mask(g.dims, 0.05, seed + 100);
        const auto pyr = build_pyramid(g, 4);
        for (std::size_t l = 0; l + 1 < pyr.size(); ++l) {
            const Grid& fine = pyr[l + 1];
            const Grid& coarse = pyr[l];
            const double fc = static_cast<double>(coarse.observed_count()) / static_cast<double>(coarse.size());
            const double ff = static_cast<double>(fine.observed_count()) / static_cast<double>(fine.size());
            EXPECT_GE(fc, ff);
            const std::size_t n = fine.dims[0];
            std::size_t expected = 0;
            for (std::size_t y = 0; y < n; y += 2)
                for (std::size_t x = 0; x < n; x += 2)
                    expected += (fine.observed(y * n + x) || fine.observed(y * n + x + 1) ||
                                 fine.observed((y + 1) * n + x) || fine.observed((y + 1) * n + x + 1));
            EXPECT_EQ(coarse.observed_count(), expected);
        }
    }
}

TEST(AddNoise, ZeroScaleIsIdentity) {
    const Grid g = random_grid({16, 16}, 10);
    EXPECT_EQ(add_noise(g, {NoiseKind::gaussian, 0.0, 1}), g);
    EXPECT_THROW((void)add_noise(g, {NoiseKind::gaussian, -0.1, 1}), InvalidArgument);
}

TEST(AddNoise, GaussianSampleStd) {
    const Grid z({256, 256}, 0.0);
    const Grid n = add_noise(z, {NoiseKind::gaussian, 0.3, 11});
    const double m = mean(n.values);
    double var = 0.0;
    for (double v : n.values) var += (v - m) * (v - m);
    const double N = static_cast<double>(n.size());
    const double sd = std::sqrt(var / (N - 1.0));
    // std error of the sample std is about sigma / sqrt(2N)
    EXPECT_NEAR(sd, 0.3, 3.0 * 0.3 / std::sqrt(2.0 * N));
}

TEST(AddNoise, LaplaceSampleVariance) {
    const Grid z({256, 256}, 0.0);
    const double b = 0.2;
    const Grid n = add_noise(z, {NoiseKind::laplace, b, 12});
    const double N = static_cast<double>(n.size());
    const double m = mean(n.values);
    double var = 0.0;
    for (double v : n.values) var += (v - m) * (v - m);
    var /= N - 1.0;
    // Var(X^2) = E[X^4] - (2b^2)^2 = 24b^4 - 4b^4 = 20b^4
    const double se = std::sqrt(20.0 * std::pow(b, 4) / N);
    EXPECT_NEAR(var, 2.0 * b * b, 3.0 * se);
}

TEST(RandomMask, CountsAndDeterminism) {
    const std::vector<std::size_t> dims{256, 256};
    const auto all = random_mask(dims, 1.0, 3);
    EXPECT_TRUE(std::all_of(all.begin(), all.end(), [](auto v) { return v == 1; }));
    const auto m = random_mask(dims, 0.1, 3);
    EXPECT_EQ(std::count(m.begin(), m.end(), 1), 6554);
    EXPECT_EQ(random_mask(dims, 0.1, 3), m);
    EXPECT_NE(random_mask(dims, 0.1, 4), m);
    EXPECT_THROW((void)random_mask(dims, 1.5, 0), InvalidArgument);
}
