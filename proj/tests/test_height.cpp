#include <gtest/gtest.h>

#include <random>

#include "layerscope/edges.hpp"
#include "layerscope/height.hpp"

using namespace layerscope;

namespace {

constexpr double ppm = 5.26;

// Band whose material (115) reaches heights[x] mm, top surface (200) above; area-weighted rows.
PlaneView band(const std::vector<double>& heights, double top_mm, unsigned seed = 0, double noise = 0.0) {
    PlaneView v;
    v.px_per_mm = ppm;
    const int rows = view_extent_px(top_mm, ppm);
    v.image = GrayImage(static_cast<int>(heights.size()), rows);
    std::mt19937 rng(seed);
    std::normal_distribution<double> n(0.0, noise > 0 ? noise : 1.0);
    for (int x = 0; x < v.image.width(); ++x)
        for (int r = 0; r < rows; ++r) {
            const double lo = (r - 0.5) / ppm, hi = (r + 0.5) / ppm;
            const double covered = std::clamp((heights[x] - lo) / (hi - lo), 0.0, 1.0);
            v.image(x, r) = clamp_to_u8(115 * covered + 200 * (1 - covered) + (noise > 0 ? n(rng) : 0.0));
        }
    return v;
}

}  // namespace

TEST(Canny, UniformIsEmpty) {
    GrayImage img(40, 30, 77);
    EXPECT_EQ(count_set(canny(img)), 0u);
}

TEST(Canny, StepIsOnePixelWide) {
    GrayImage img(40, 30, 20);
    for (int y = 0; y < 30; ++y)
        for (int x = 20; x < 40; ++x) img(x, y) = 220;
    const Mask e = canny(img);
    for (int y = 3; y < 27; ++y) {
        int n = 0;
        for (int x = 0; x < 40; ++x) n += e(x, y) ? 1 : 0;
        EXPECT_EQ(n, 1) << "row " << y;
        EXPECT_TRUE(e(19, y) || e(20, y));
    }
}

TEST(TopEdge, FlatBand) {
    for (double H : {0.4, 0.8, 2.0, 6.4}) {
        const auto v = band(std::vector<double>(80, H), H + 0.4);
        const auto p = extract_top_edge(v, H, 0.4);
        ASSERT_EQ(p.per_column_height.size(), 80u);
        for (double h : p.per_column_height) EXPECT_NEAR(h, H, 1.0 / ppm) << H;
        EXPECT_EQ(p.missing_columns, 0);
    }
}

TEST(TopEdge, FlatBandWithSpeckle) {
    const double H = 4.0;
    const auto v = band(std::vector<double>(200, H), H + 0.4, 7, 5.0);
    const auto s = height_stats(extract_top_edge(v, H, 0.4));
    EXPECT_LT(s.total_error, 0.1);
}

TEST(TopEdge, Blank) {
    PlaneView v;
    v.px_per_mm = ppm;
    v.image = GrayImage(50, 20, 0);
    EXPECT_THROW(extract_top_edge(v, 1.0, 0.4), EdgeNotFound);
}

TEST(TopEdge, Notch) {
    const double H = 4.0;
    std::vector<double> hs(60, H);
    for (int x = 30; x < 33; ++x) hs[x] = H - 1.0;
    const auto p = extract_top_edge(band(hs, H + 0.4), H, 0.4);
    for (int x = 30; x < 33; ++x) EXPECT_NEAR(p.per_column_height[x], H - 1.0, 1.0 / ppm);
    EXPECT_NEAR(p.per_column_height[10], H, 1.0 / ppm);
}

TEST(HeightStats, Basics) {
    HeightProfile p{{1.0, 1.0, 1.0}, 1.0, 0.4, 0};
    auto s = height_stats(p);
    EXPECT_EQ(s.mean_error, 0);
    EXPECT_EQ(s.total_error, 0);
    EXPECT_EQ(s.max_abs_error, 0);
    p.per_column_height = {1.4, 0.6, 1.4, 0.6};
    s = height_stats(p);
    EXPECT_NEAR(s.mean_error, 0, 1e-12);
    EXPECT_NEAR(s.total_error, 0.4, 1e-12);
}

TEST(HeightStats, OracleAndPermutation) {
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> u(0, 3);
    HeightProfile p;
    p.reference_height = 1.5;
    for (int i = 0; i < 101; ++i) p.per_column_height.push_back(u(rng));
    double sum = 0, abs_sum = 0, mx = 0;
    for (double h : p.per_column_height) {
        sum += h - 1.5;
        abs_sum += std::abs(h - 1.5);
        mx = std::max(mx, std::abs(h - 1.5));
    }
    const auto s = height_stats(p);
    EXPECT_NEAR(s.mean_error, sum / 101, 1e-12);
    EXPECT_NEAR(s.total_error, abs_sum / 101, 1e-12);
    EXPECT_EQ(s.max_abs_error, mx);
    std::shuffle(p.per_column_height.begin(), p.per_column_height.end(), rng);
    const auto t = height_stats(p);
    EXPECT_NEAR(t.mean_error, s.mean_error, 1e-12);
    EXPECT_NEAR(t.total_error, s.total_error, 1e-12);
    EXPECT_EQ(t.max_abs_error, s.max_abs_error);
}

TEST(HeightVerdict, Rules) {
    const double h = 0.4;
    auto st = [](double e) { return HeightStats{-e, e, e}; };
    EXPECT_EQ(height_verdict({st(0), st(0), st(0)}, h), HeightVerdict::Ok);
    EXPECT_EQ(height_verdict({st(0), st(1.5 * h)}, h), HeightVerdict::Warning);
    EXPECT_EQ(height_verdict({st(0), st(1.5 * h), st(0)}, h), HeightVerdict::Ok);
    EXPECT_EQ(height_verdict({st(0), st(1.5 * h), st(1.5 * h)}, h), HeightVerdict::Failure);
    EXPECT_EQ(height_verdict({st(0), st(2.1 * h)}, h), HeightVerdict::Failure);
    HeightStats biased{2.2 * h, 0.5 * h, 3 * h};
    EXPECT_EQ(height_verdict({biased}, h), HeightVerdict::Failure);
}

TEST(HeightVerdict, Monotone) {
    const double h = 0.4;
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(0, 3 * h);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<HeightStats> hist;
        for (int i = 0; i < 4; ++i) {
            const double e = u(rng);
            hist.push_back({e * 0.5, e, e});
        }
        const auto base = height_verdict(hist, h);
        hist.back().total_error += 0.1;
        hist.back().mean_error += 0.05;
        EXPECT_GE(static_cast<int>(height_verdict(hist, h)), static_cast<int>(base));
    }
}
