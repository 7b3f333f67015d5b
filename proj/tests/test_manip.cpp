#include <gtest/gtest.h>

#include <cmath>

#include "cfbench/manip.hpp"

using namespace cfbench;

namespace {

ImagePatch random_patch(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    ImagePatch p(w, h);
    for (auto& px : p.pixels) px = static_cast<std::uint8_t>(rng.below(256));
    return p;
}

// Textured but smooth-ish patch so JPEG distortion is moderate.
ImagePatch textured_patch(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    ImagePatch p(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 128.0 + 50.0 * std::sin(0.3 * x) * std::cos(0.21 * y) +
                       8.0 * rng.normal();
            p.at(y, x) = static_cast<std::uint8_t>(clamp_u8(lround_half_away(v)));
        }
    return p;
}

// Truncated, renormalized 1-D Gaussian weight at offset t.
double kernel_weight(double sigma, int t) {
    int r = static_cast<int>(std::ceil(3.0 * sigma));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) sum += std::exp(-0.5 * i * i / (sigma * sigma));
    return std::exp(-0.5 * t * t / (sigma * sigma)) / sum;
}

}  // namespace

TEST(GaussianBlur, ConstantIsFixedPoint) {
    ImagePatch p(16, 16, 77);
    EXPECT_EQ(gaussian_blur(p, 1.10), p);
}

TEST(GaussianBlur, ImpulseCenterMatchesKernelSquare) {
    ImagePatch p(9, 9, 0);
    p.at(4, 4) = 255;
    ImagePatch out = gaussian_blur(p, 1.10);
    long expected = lround_half_away(255.0 * kernel_weight(1.10, 0) * kernel_weight(1.10, 0));
    EXPECT_EQ(out.at(4, 4), expected);
}

TEST(GaussianBlur, HalfSigmaHasFiveTapKernel) {
    // radius ceil(3 * 0.5) = 2
    EXPECT_EQ(detail::gaussian_kernel(0.50).size(), 5u);
    EXPECT_EQ(detail::gaussian_kernel(1.10).size(), 9u);
    // and an impulse never spreads past the radius
    ImagePatch p(11, 11, 0);
    p.at(5, 5) = 255;
    ImagePatch out = gaussian_blur(p, 0.50);
    EXPECT_EQ(out.at(5, 8), 0);
    long tap1 = lround_half_away(255.0 * kernel_weight(0.50, 1) * kernel_weight(0.50, 0));
    EXPECT_EQ(out.at(5, 4), tap1);
}

TEST(GaussianBlur, RejectsNonPositiveSigma) {
    EXPECT_THROW(gaussian_blur(ImagePatch(8, 8), 0.0), std::invalid_argument);
}

TEST(MedianFilter, ConstantIsFixedPoint) {
    ImagePatch p(12, 12, 9);
    EXPECT_EQ(median_filter(p, 3), p);
}

TEST(MedianFilter, NinePointMedian) {
    // window values {0,0,0,0,255,255,255,255,10} -> median 10
    ImagePatch p(3, 3);
    p.pixels = {0, 0, 0, 0, 255, 255, 255, 255, 10};
    ImagePatch out = median_filter(p, 3);
    // center window is the full patch
    EXPECT_EQ(out.at(1, 1), 10);
}

TEST(MedianFilter, RemovesSaltImpulse) {
    ImagePatch p(9, 9, 0);
    p.at(4, 4) = 255;
    ImagePatch out = median_filter(p, 3);
    for (auto px : out.pixels) EXPECT_EQ(px, 0);
}

TEST(MedianFilter, OutputValuesComeFromInput) {
    ImagePatch p = random_patch(16, 16, 31);
    ImagePatch out = median_filter(p, 5);
    // median of an odd count of 8-bit values is one of them; with mirror
    // boundaries every output value must occur somewhere in the input
    bool present[256] = {};
    for (auto px : p.pixels) present[px] = true;
    for (auto px : out.pixels) EXPECT_TRUE(present[px]);
}

TEST(MedianFilter, EvenKernelThrows) {
    EXPECT_THROW(median_filter(ImagePatch(8, 8), 4), std::invalid_argument);
    EXPECT_THROW(median_filter(ImagePatch(8, 8), 1), std::invalid_argument);
}

TEST(Resize, ScaleOneIsIdentity) {
    ImagePatch p = random_patch(17, 13, 37);
    EXPECT_EQ(resize(p, 1.0), p);
}

TEST(Resize, BilinearWeightsOnTwoPixelRow) {
    ImagePatch p(2, 1);
    p.pixels = {0, 100};
    ImagePatch out = resize(p, 2.0);
    ASSERT_EQ(out.width, 4);
    ASSERT_EQ(out.height, 2);
    // src coords -0.25, 0.25, 0.75, 1.25 with edge clamping
    for (int row = 0; row < 2; ++row) {
        EXPECT_EQ(out.at(row, 0), 0);
        EXPECT_EQ(out.at(row, 1), 25);
        EXPECT_EQ(out.at(row, 2), 75);
        EXPECT_EQ(out.at(row, 3), 100);
    }
}

TEST(Resize, SmallUpscaleRoundsDimsAndCropsBack) {
    ImagePatch p = random_patch(128, 128, 41);
    ImagePatch big = resize(p, 1.01);
    EXPECT_EQ(big.width, 129);
    EXPECT_EQ(big.height, 129);
    ManipulationSpec spec{ManipKind::Resize, 0.0, 0, 0, 1.01};
    ImagePatch out = apply_manipulation(p, spec);
    EXPECT_EQ(out.width, 128);
    EXPECT_EQ(out.height, 128);
}

TEST(Resize, ZeroOutputDimensionThrows) {
    EXPECT_THROW(resize(ImagePatch(4, 4), 0.05), std::invalid_argument);
}

TEST(Jpeg, Q50TableEqualsBaseTable) {
    // scaling factor 200 - 2*50 = 100 leaves the table untouched
    auto qt = jpeg_quant_table(50);
    const int base[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                          14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                          18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                          49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
    for (int i = 0; i < 64; ++i) EXPECT_EQ(qt[i], base[i]);
}

TEST(Jpeg, QualityScalingFormula) {
    // spot-check the published scaling at Q=70 and Q=10 against the formula
    auto q70 = jpeg_quant_table(70);
    auto q10 = jpeg_quant_table(10);
    EXPECT_EQ(q70[0], (16 * 60 + 50) / 100);
    EXPECT_EQ(q10[63], std::min(255, (99 * 500 + 50) / 100));
    EXPECT_THROW(jpeg_quant_table(0), std::invalid_argument);
    EXPECT_THROW(jpeg_quant_table(101), std::invalid_argument);
}

TEST(Jpeg, MidGrayConstantSurvives) {
    ImagePatch p(16, 16, 128);
    EXPECT_EQ(jpeg_roundtrip(p, 70), p);
}

TEST(Jpeg, CoarserQualityDistortsMore) {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        ImagePatch p = textured_patch(64, 64, seed);
        double m70 = mse(jpeg_roundtrip(p, 70), p);
        double m90 = mse(jpeg_roundtrip(p, 90), p);
        EXPECT_GE(m70, m90);
        EXPECT_GT(m70, 0.0);
    }
}

TEST(Jpeg, NearIdempotentAtFixedQuality) {
    for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
        ImagePatch p = textured_patch(48, 48, seed);
        ImagePatch once = jpeg_roundtrip(p, 70);
        ImagePatch twice = jpeg_roundtrip(once, 70);
        EXPECT_LT(mse(twice, once), mse(once, p));
    }
}

TEST(Jpeg, NonMultipleOfEightDims) {
    ImagePatch p = textured_patch(21, 13, 5);
    ImagePatch out = jpeg_roundtrip(p, 70);
    EXPECT_EQ(out.width, 21);
    EXPECT_EQ(out.height, 13);
}

TEST(Apply, DispatchMatchesDirectCalls) {
    ImagePatch p = random_patch(32, 32, 51);
    ManipulationSpec med{ManipKind::Median, 0.0, 0, 7, 0.0};
    EXPECT_EQ(apply_manipulation(p, med), median_filter(p, 7));
    ManipulationSpec blur{ManipKind::Blur, 1.10, 0, 0, 0.0};
    EXPECT_EQ(apply_manipulation(p, blur), gaussian_blur(p, 1.10));
    ImagePatch flat(32, 32, 200);
    EXPECT_EQ(apply_manipulation(flat, blur), flat);
}

TEST(Apply, PreservesDimensionsAcrossStandardTasks) {
    ImagePatch p = textured_patch(64, 64, 61);
    auto tasks = standard_tasks();
    ASSERT_EQ(tasks.size(), 8u);
    for (const auto& t : tasks) {
        ImagePatch out = apply_manipulation(p, t);
        EXPECT_EQ(out.width, p.width);
        EXPECT_EQ(out.height, p.height);
    }
}
