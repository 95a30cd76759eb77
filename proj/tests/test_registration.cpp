#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>
#include <set>

#include "layerscope/registration.hpp"

using namespace layerscope;

namespace {

Polyline square(double side) { return {{0, 0}, {side, 0}, {side, side}, {0, side}}; }

Polyline fox() { return {{-21, -20}, {8, -25.5}, {21, -12}, {17, 10}, {4, 25.5}, {-12, 18}, {-20, 2}}; }

// Independent oracle: the similarity as a 4-parameter linear least-squares problem.
Similarity linear_oracle(const std::vector<Point2>& p, const std::vector<Point2>& m) {
    Eigen::MatrixXd A(2 * p.size(), 4);
    Eigen::VectorXd b(2 * p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        A.row(2 * i) << p[i].x, -p[i].y, 1, 0;
        A.row(2 * i + 1) << p[i].y, p[i].x, 0, 1;
        b(2 * i) = m[i].x;
        b(2 * i + 1) = m[i].y;
    }
    const Eigen::Vector4d x = A.colPivHouseholderQr().solve(b);
    return {std::atan2(x(1), x(0)), std::hypot(x(0), x(1)), {x(2), x(3)}};
}

}  // namespace

TEST(Template, UnitSquarePixelCount) {
    const auto t = rasterize_template({square(1.0)}, 10.0);
    EXPECT_EQ(t.raster.width(), 13);
    EXPECT_EQ(t.raster.height(), 13);
    std::set<std::pair<int, int>> expect;
    for (int x = 1; x <= 11; ++x)
        for (int y : {1, 2, 11, 12}) expect.insert({x, y});
    for (int y = 1; y <= 11; ++y)
        for (int x : {1, 2, 11, 12}) expect.insert({x, y});
    std::set<std::pair<int, int>> got;
    for (int y = 0; y < 13; ++y)
        for (int x = 0; x < 13; ++x)
            if (t.raster(x, y)) got.insert({x, y});
    EXPECT_EQ(got, expect);
    EXPECT_EQ(t.anchor_x, 6);
    EXPECT_EQ(t.anchor_y, 6);
}

TEST(Template, ScaledCopy) {
    const auto a = rasterize_template({square(3.0)}, 5.0);
    const auto b = rasterize_template({square(6.0)}, 5.0);
    EXPECT_EQ(b.raster.width() - 3, 2 * (a.raster.width() - 3));
    EXPECT_EQ(b.raster.height() - 3, 2 * (a.raster.height() - 3));
}

TEST(Template, Degenerate) {
    EXPECT_THROW(rasterize_template({Polyline{{1, 1}}}, 5.0), TemplateError);
    EXPECT_THROW(rasterize_template({Polyline{{1, 1}, {1, 1}, {1, 1}}}, 5.0), TemplateError);
    EXPECT_THROW(rasterize_template({}, 5.0), TemplateError);
}

TEST(Match, ExactPaste) {
    const auto t = rasterize_template({fox()}, 1.0);
    Mask img(120, 110, 0);
    for (int y = 0; y < t.raster.height(); ++y)
        for (int x = 0; x < t.raster.width(); ++x) img(30 + x, 40 + y) = t.raster(x, y);
    const auto r = match_template(img, t);
    EXPECT_EQ(r.x, 30);
    EXPECT_EQ(r.y, 40);
    EXPECT_NEAR(r.score, 1.0, 1e-9);

    GrayImage gray(120, 110, 0);
    for (std::size_t i = 0; i < img.size(); ++i) gray.data()[i] = static_cast<std::uint8_t>(60 + 150 * img.data()[i]);
    const auto g = match_template(gray, t);
    EXPECT_EQ(g.x, 30);
    EXPECT_EQ(g.y, 40);
    EXPECT_NEAR(g.score, 1.0, 1e-9);
}

TEST(Match, ExhaustiveOracle) {
    std::mt19937 rng(11);
    std::uniform_int_distribution<int> u(0, 255);
    GrayImage img(40, 30);
    for (auto& v : img.data()) v = static_cast<std::uint8_t>(u(rng));
    const auto t = rasterize_template({Polyline{{0, 0}, {6, 1}, {3, 7}}}, 1.0);
    double best = -2;
    int bx = -1, by = -1;
    const int w = t.raster.width(), h = t.raster.height();
    for (int y = 0; y + h <= 30; ++y)
        for (int x = 0; x + w <= 40; ++x) {
            double mt = 0, mi = 0;
            for (int j = 0; j < h; ++j)
                for (int i = 0; i < w; ++i) mt += t.raster(i, j), mi += img(x + i, y + j);
            mt /= w * h;
            mi /= w * h;
            double num = 0, dt = 0, di = 0;
            for (int j = 0; j < h; ++j)
                for (int i = 0; i < w; ++i) {
                    const double a = t.raster(i, j) - mt, b = img(x + i, y + j) - mi;
                    num += a * b;
                    dt += a * a;
                    di += b * b;
                }
            const double s = num / std::sqrt(dt * di);
            if (s > best + 1e-12) best = s, bx = x, by = y;
        }
    const auto r = match_template(img, t);
    EXPECT_EQ(r.x, bx);
    EXPECT_EQ(r.y, by);
    EXPECT_NEAR(r.score, best, 1e-9);
}

TEST(Match, AffineIntensityInvariance) {
    std::mt19937 rng(2);
    std::uniform_int_distribution<int> u(0, 100);
    GrayImage a(50, 50), b(50, 50);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a.data()[i] = static_cast<std::uint8_t>(u(rng));
        b.data()[i] = static_cast<std::uint8_t>(2 * a.data()[i] + 30);
    }
    const auto t = rasterize_template({square(8)}, 1.0);
    const auto ra = match_template(a, t), rb = match_template(b, t);
    EXPECT_EQ(ra.x, rb.x);
    EXPECT_EQ(ra.y, rb.y);
}

TEST(Match, TemplateTooLarge) {
    const auto t = rasterize_template({square(20)}, 1.0);
    EXPECT_THROW(match_template(Mask(10, 10), t), TemplateError);
}

TEST(Similarity, MatchesLinearOracle) {
    std::mt19937 rng(4);
    std::normal_distribution<double> n(0, 10);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Point2> p, m;
        for (int i = 0; i < 30; ++i) {
            p.push_back({n(rng), n(rng)});
            m.push_back({n(rng), n(rng)});
        }
        const auto a = fit_similarity(p, m);
        const auto b = linear_oracle(p, m);
        EXPECT_NEAR(a.s, b.s, 1e-9);
        EXPECT_NEAR(std::remainder(a.theta - b.theta, 2 * M_PI), 0, 1e-9);
        EXPECT_NEAR(a.tau.x, b.tau.x, 1e-9);
        EXPECT_NEAR(a.tau.y, b.tau.y, 1e-9);
    }
}

TEST(Similarity, KnownCorrespondences) {
    const Similarity truth{deg2rad(5), 1.0, {3, 2}};
    std::vector<Point2> p, m;
    for (const auto& q : resample_loop(fox(), 0.5)) {
        p.push_back(q);
        m.push_back(truth.apply(q));
    }
    const auto s = fit_similarity(p, m);
    EXPECT_NEAR(rad2deg(s.theta), 5.0, 1e-9);
    EXPECT_NEAR(s.tau.x, 3, 1e-9);
    EXPECT_NEAR(s.tau.y, 2, 1e-9);
}

TEST(Icp, IdenticalCloudsOneIteration) {
    const auto pts = resample_loop(fox(), 0.5);
    const auto r = icp_register(pts, pts, Transform2D::identity(), centroid(fox()));
    EXPECT_EQ(r.iterations, 1);
    EXPECT_NEAR(r.residual, 0, 1e-20);
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.transform.theta, 0, 1e-12);
    EXPECT_NEAR(r.transform.s_x, 1, 1e-12);
}

TEST(Icp, RecoversRotationAndShift) {
    const auto outline = fox();
    const Point2 c = centroid(outline);
    const Transform2D truth{deg2rad(5), 1, 1, 3, 2};
    std::vector<Point2> src;
    for (const auto& q : resample_loop(outline, 0.19)) src.push_back(truth.apply(q, c));
    const auto r = icp_register(src, resample_loop(outline, 0.5), {0, 1, 1, 3, 2}, c);
    EXPECT_NEAR(rad2deg(r.transform.theta), 5, 0.1);
    EXPECT_NEAR(r.transform.t_x, 3, 0.05);
    EXPECT_NEAR(r.transform.t_y, 2, 0.05);
    EXPECT_NEAR(r.transform.s_x, 1, 0.01);
}

TEST(Icp, ResidualNonIncreasing) {
    std::mt19937 rng(8);
    std::uniform_real_distribution<double> ang(-10, 10), sh(-4, 4), jitter(-0.3, 0.3), clutter(-40, 40);
    for (int trial = 0; trial < 100; ++trial) {
        Polyline poly;
        const int n = 5 + trial % 6;
        for (int i = 0; i < n; ++i) {
            const double a = 2 * M_PI * i / n;
            const double r = 15 + 10 * std::abs(jitter(rng)) * 3;
            poly.push_back({r * std::cos(a), r * std::sin(a)});
        }
        const Point2 c = centroid(poly);
        const Transform2D t{deg2rad(ang(rng)), 1, 1, sh(rng), sh(rng)};
        std::vector<Point2> src;
        for (const auto& q : resample_loop(poly, 0.2)) src.push_back(t.apply(q, c) + Point2{jitter(rng) * 0.3, jitter(rng) * 0.3});
        for (int i = 0; i < 200; ++i) src.push_back({clutter(rng), clutter(rng)});
        const auto r = icp_register(src, resample_loop(poly, 0.5), {0, 1, 1, t.t_x, t.t_y}, c);
        for (std::size_t i = 1; i < r.history.size(); ++i)
            EXPECT_LE(r.history[i], r.history[i - 1] * (1 + 1e-9)) << "trial " << trial << " iter " << i;
    }
}

TEST(Icp, TooFewPoints) {
    const auto pts = resample_loop(fox(), 0.5);
    EXPECT_THROW(icp_register({{200, 200}, {201, 200}}, pts, {}, {}), IcpError);
    EXPECT_THROW(icp_register(pts, {{0, 0}, {1, 1}}, {}, {}), IcpError);
}

TEST(NearestIndex, MatchesBruteForce) {
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> u(-50, 50);
    std::vector<Point2> pts;
    for (int i = 0; i < 3000; ++i) pts.push_back({u(rng), u(rng)});
    const NearestIndex idx(pts, 2.0);
    for (int q = 0; q < 500; ++q) {
        const Point2 p{u(rng) * 1.5, u(rng) * 1.5};
        std::size_t best = 0;
        for (std::size_t i = 1; i < pts.size(); ++i)
            if (distance(pts[i], p) < distance(pts[best], p)) best = i;
        EXPECT_EQ(idx.nearest(p), best);
    }
}

TEST(RegistrationVerdict, Bands) {
    EXPECT_EQ(registration_verdict(Transform2D::identity(), 0).status, RegistrationStatus::Aligned);
    EXPECT_EQ(registration_verdict({deg2rad(5), 1, 1, 4, 0}, 0.01).status, RegistrationStatus::Corrected);
    EXPECT_EQ(registration_verdict({0, 1, 1, 12, 0}, 0.01).status, RegistrationStatus::Failure);
    EXPECT_EQ(registration_verdict({deg2rad(1.5), 1, 1, 1.0, 1.0}, 0.01).status, RegistrationStatus::Aligned);
    EXPECT_EQ(registration_verdict({deg2rad(11), 1, 1, 0, 0}, 0.01).status, RegistrationStatus::Failure);
    EXPECT_EQ(registration_verdict({0, 1, 1, 0, 0}, 1.0, 0.1).status, RegistrationStatus::Failure);
    EXPECT_EQ(registration_verdict({0, 1, 1, 0, 0}, 0.01, 0.1).status, RegistrationStatus::Aligned);
}
