#pragma once

// Outline registration: template matching for coarse translation, then ICP with an isotropic
// similarity fit for rotation, translation and scale.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "edges.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "image.hpp"
#include "projection.hpp"
#include "transform2d.hpp"

namespace layerscope {

struct BinaryTemplate {
    Mask raster;
    double px_per_mm = 5.26;
    int anchor_x = 0;  // pixel of the outline centroid
    int anchor_y = 0;
    Point2 origin;     // world mm of pixel (0, 0); rows run towards -y like PlaneView
};

/// Rasterizes closed outline loops with a 2 px Bresenham stroke.
inline BinaryTemplate rasterize_template(const std::vector<Polyline>& loops, double px_per_mm) {
    if (!(px_per_mm > 0)) throw TemplateError("px_per_mm must be positive");
    for (const auto& l : loops)
        if (l.size() < 3) throw TemplateError("outline loop needs at least 3 vertices");
    if (loops.empty()) throw TemplateError("empty outline");
    const Box2 b = bounds(loops);
    if (!(b.width() * px_per_mm >= 1.0 && b.height() * px_per_mm >= 1.0)) throw TemplateError("degenerate outline");
    constexpr int margin = 1;
    BinaryTemplate t;
    t.px_per_mm = px_per_mm;
    t.origin = {b.min.x - margin / px_per_mm, b.max.y + margin / px_per_mm};
    const int w = static_cast<int>(std::ceil(b.width() * px_per_mm)) + 1 + 2 * margin;
    const int h = static_cast<int>(std::ceil(b.height() * px_per_mm)) + 1 + 2 * margin;
    t.raster = Mask(w, h, 0);
    auto px = [&](const Point2& p) {
        return std::pair<int, int>{static_cast<int>(std::lround((p.x - t.origin.x) * px_per_mm)),
                                   static_cast<int>(std::lround((t.origin.y - p.y) * px_per_mm))};
    };
    for (const auto& l : loops)
        for (std::size_t i = 0; i < l.size(); ++i) {
            auto [x0, y0] = px(l[i]);
            auto [x1, y1] = px(l[(i + 1) % l.size()]);
            draw_line_2px<std::uint8_t>(t.raster, x0, y0, x1, y1, 1);
        }
    const Point2 c = centroid(loops);
    std::tie(t.anchor_x, t.anchor_y) = px(c);
    return t;
}

struct MatchResult {
    int x = 0;  // top-left placement of the template in the searched raster
    int y = 0;
    double score = -1.0;
};

namespace detail {

inline std::vector<double> integral(const RealImage& img, bool squared) {
    const int w = img.width(), h = img.height();
    std::vector<double> s(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);
    for (int y = 0; y < h; ++y) {
        double row = 0.0;
        for (int x = 0; x < w; ++x) {
            const double v = img(x, y);
            row += squared ? v * v : v;
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    return s;
}

}  // namespace detail

/// Normalized cross-correlation (mean-subtracted) of a binary template over every placement.
/// Ties go to the smallest row, then the smallest column.
template <typename T>
MatchResult match_template(const Image<T>& image, const BinaryTemplate& tmpl) {
    const int W = image.width(), H = image.height();
    const int w = tmpl.raster.width(), h = tmpl.raster.height();
    if (w > W || h > H) throw TemplateError("template larger than the searched image");
    std::vector<std::pair<int, int>> on;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (tmpl.raster(x, y)) on.emplace_back(x, y);
    if (on.empty()) throw TemplateError("template has no set pixels");
    const double N = static_cast<double>(w) * h;
    const double n_on = static_cast<double>(on.size());
    const double t_mean = n_on / N;
    const double t_var = n_on - n_on * n_on / N;  // sum of squared deviations of the template

    const RealImage img = to_real(image);
    const auto S = detail::integral(img, false), S2 = detail::integral(img, true);
    auto box = [&](const std::vector<double>& s, int x, int y) {
        const int stride = W + 1;
        return s[(y + h) * stride + x + w] - s[y * stride + x + w] - s[(y + h) * stride + x] + s[y * stride + x];
    };
    MatchResult best;
    best.score = -std::numeric_limits<double>::infinity();
    for (int y = 0; y + h <= H; ++y)
        for (int x = 0; x + w <= W; ++x) {
            const double sw = box(S, x, y);
            const double iv = box(S2, x, y) - sw * sw / N;
            double score = 0.0;
            if (iv > 1e-9 && t_var > 1e-12) {
                double st = 0.0;
                for (auto [tx, ty] : on) st += img(x + tx, y + ty);
                score = (st - t_mean * sw) / std::sqrt(t_var * iv);
            }
            if (score > best.score) best = {x, y, score};
        }
    return best;
}

// ---------------------------------------------------------------------------------------------
// ICP

/// Isotropic similarity m ~ s R p + tau.
struct Similarity {
    double theta = 0.0;
    double s = 1.0;
    Point2 tau;

    Point2 apply(const Point2& p) const noexcept {
        const double c = std::cos(theta), sn = std::sin(theta);
        return {s * (c * p.x - sn * p.y) + tau.x, s * (sn * p.x + c * p.y) + tau.y};
    }
};

/// Closed-form least-squares similarity from p_i to m_i (Umeyama, 2-D).
inline Similarity fit_similarity(const std::vector<Point2>& p, const std::vector<Point2>& m, bool with_scale = true) {
    const std::size_t n = p.size();
    if (n < 2 || m.size() != n) throw IcpError("similarity fit needs at least 2 correspondences");
    Point2 cp, cm;
    for (std::size_t i = 0; i < n; ++i) {
        cp += p[i];
        cm += m[i];
    }
    cp = cp / static_cast<double>(n);
    cm = cm / static_cast<double>(n);
    double a = 0.0, b = 0.0, var_p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Point2 dp = p[i] - cp, dm = m[i] - cm;
        a += dot(dp, dm);
        b += cross(dp, dm);
        var_p += dot(dp, dp);
    }
    if (var_p <= 0.0) throw IcpError("degenerate correspondences");
    Similarity sim;
    sim.theta = std::atan2(b, a);
    sim.s = with_scale ? std::hypot(a, b) / var_p : 1.0;
    if (!(sim.s > 0)) throw IcpError("degenerate scale");
    const Point2 rc = sim.apply(cp) - sim.tau;
    sim.tau = cm - rc;
    return sim;
}

inline double mean_squared_residual(const Similarity& sim, const std::vector<Point2>& p, const std::vector<Point2>& m) {
    double e = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Point2 d = m[i] - sim.apply(p[i]);
        e += dot(d, d);
    }
    return p.empty() ? 0.0 : e / static_cast<double>(p.size());
}

/// Nearest-neighbour lookup over a fixed point set: grid buckets, brute force for small sets.
class NearestIndex {
public:
    NearestIndex(std::vector<Point2> pts, double cell) : pts_(std::move(pts)), cell_(cell) {
        if (pts_.size() < kBruteForce) return;
        box_ = bounds(pts_);
        nx_ = std::max(1, static_cast<int>(std::ceil(box_.width() / cell_)) + 1);
        ny_ = std::max(1, static_cast<int>(std::ceil(box_.height() / cell_)) + 1);
        cells_.assign(static_cast<std::size_t>(nx_) * ny_, {});
        for (std::size_t i = 0; i < pts_.size(); ++i) {
            auto [cx, cy] = cell_of(pts_[i]);
            cells_[cy * nx_ + cx].push_back(i);
        }
    }

    std::size_t size() const noexcept { return pts_.size(); }
    const Point2& operator[](std::size_t i) const noexcept { return pts_[i]; }

    /// Index of the nearest point; equal distances resolve to the lowest index.
    std::size_t nearest(const Point2& q) const {
        std::size_t best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        auto consider = [&](std::size_t i) {
            const Point2 d = pts_[i] - q;
            const double d2 = dot(d, d);
            if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
                best_d2 = d2;
                best = i;
            }
        };
        if (cells_.empty()) {
            for (std::size_t i = 0; i < pts_.size(); ++i) consider(i);
            return best;
        }
        const double fx = (q.x - box_.min.x) / cell_, fy = (q.y - box_.min.y) / cell_;
        const int qx = static_cast<int>(std::floor(fx)), qy = static_cast<int>(std::floor(fy));
        const int max_ring = std::max(nx_, ny_) + std::abs(qx) + std::abs(qy) + 1;
        for (int r = 0; r <= max_ring; ++r) {
            for (int cy = qy - r; cy <= qy + r; ++cy)
                for (int cx = qx - r; cx <= qx + r; ++cx) {
                    if (std::max(std::abs(cx - qx), std::abs(cy - qy)) != r) continue;
                    if (cx < 0 || cy < 0 || cx >= nx_ || cy >= ny_) continue;
                    for (std::size_t i : cells_[cy * nx_ + cx]) consider(i);
                }
            // Every point in ring r+1 or beyond is at least r * cell away.
            if (best_d2 < std::numeric_limits<double>::infinity() && std::sqrt(best_d2) <= r * cell_) break;
        }
        return best;
    }

private:
    static constexpr std::size_t kBruteForce = 500;

    std::pair<int, int> cell_of(const Point2& p) const {
        return {std::clamp(static_cast<int>((p.x - box_.min.x) / cell_), 0, nx_ - 1),
                std::clamp(static_cast<int>((p.y - box_.min.y) / cell_), 0, ny_ - 1)};
    }

    std::vector<Point2> pts_;
    double cell_;
    Box2 box_;
    int nx_ = 0, ny_ = 0;
    std::vector<std::vector<std::size_t>> cells_;
};

struct IcpOptions {
    int max_iterations = 50;
    double tolerance = 1e-6;      // mm^2 change in the mean squared residual
    double mask_width_px = 30.0;  // source points farther than this from the initial outline are ignored
    double px_per_mm = 5.26;
    bool estimate_scale = true;
};

struct IcpResult {
    Transform2D transform;
    double residual = 0.0;  // mean squared distance, mm^2
    int iterations = 0;
    bool converged = false;
    std::size_t source_points = 0;  // after masking
    std::vector<double> history;    // residual after every iteration
};

inline Similarity to_similarity(const Transform2D& t) {
    const double s = std::sqrt(t.s_x * t.s_y);
    return {t.theta, s, {s * t.t_x, s * t.t_y}};
}

inline Transform2D to_transform(const Similarity& sim) {
    return {Transform2D::normalize_angle(sim.theta), sim.s, sim.s, sim.tau.x / sim.s, sim.tau.y / sim.s};
}

/// Source points within the restrictive band around the initialized outline.
inline std::vector<Point2> mask_source(const std::vector<Point2>& source, const std::vector<Point2>& target,
                                       const Transform2D& init, const Point2& pivot, double radius_mm) {
    std::vector<Point2> placed;
    placed.reserve(target.size());
    for (const auto& p : target) placed.push_back(init.apply(p, pivot));
    if (placed.empty()) return {};
    const NearestIndex idx(placed, std::max(radius_mm, 0.5));
    std::vector<Point2> kept;
    for (const auto& m : source)
        if (distance(idx[idx.nearest(m)], m) <= radius_mm) kept.push_back(m);
    return kept;
}

/// Registers target (reference outline samples) onto source (detected edge points), both in mm.
/// The fitted map is source ~ pivot + s (R (target - pivot) + t), reported as a Transform2D.
inline IcpResult icp_register(const std::vector<Point2>& source, const std::vector<Point2>& target,
                              const Transform2D& init, const Point2& pivot, const IcpOptions& opt = {}) {
    if (target.size() < 3) throw IcpError("target needs at least 3 points");
    const double radius = opt.mask_width_px / opt.px_per_mm;
    const auto kept = mask_source(source, target, init, pivot, radius);
    if (kept.size() < 3) throw IcpError("fewer than 3 source points inside the mask");

    std::vector<Point2> p;  // centred target
    for (const auto& q : target) p.push_back(q - pivot);
    std::vector<Point2> src;
    for (const auto& q : kept) src.push_back(q - pivot);
    const NearestIndex idx(src, std::max(0.5, radius / 4));

    IcpResult res;
    res.source_points = kept.size();
    Similarity sim = to_similarity(init);
    std::vector<Point2> m(p.size());
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opt.max_iterations; ++it) {
        for (std::size_t i = 0; i < p.size(); ++i) m[i] = src[idx.nearest(sim.apply(p[i]))];
        if (it == 0) prev = mean_squared_residual(sim, p, m);
        sim = fit_similarity(p, m, opt.estimate_scale);
        const double e = mean_squared_residual(sim, p, m);
        res.history.push_back(e);
        res.iterations = it + 1;
        if (prev - e < opt.tolerance) {
            res.converged = true;
            break;
        }
        prev = e;
    }
    res.residual = res.history.back();
    res.transform = to_transform(sim);
    return res;
}

// ---------------------------------------------------------------------------------------------
// Verdict and the layer-level driver

enum class RegistrationStatus { Aligned, Corrected, Failure };

inline const char* to_string(RegistrationStatus s) noexcept {
    switch (s) {
        case RegistrationStatus::Aligned: return "Aligned";
        case RegistrationStatus::Corrected: return "Corrected";
        case RegistrationStatus::Failure: return "Failure";
    }
    return "?";
}

struct RegistrationRules {
    double nominal_theta_deg = 2.0;
    double nominal_shift_mm = 1.7;
    double nominal_scale = 0.02;  // |s - 1|
    double max_theta_deg = 10.0;
    double max_shift_mm = 8.0;
    double max_scale = 0.2;
    double min_score = 0.2;        // template-matching peak below this is suspicious
    double max_residual = 0.25;    // mm^2; a good ICP fit overrides a weak template peak
};

struct RegistrationVerdict {
    RegistrationStatus status = RegistrationStatus::Aligned;
    Transform2D transform;
    std::string reason;
};

inline RegistrationVerdict registration_verdict(const Transform2D& t, double residual, double score = 1.0,
                                                const RegistrationRules& rules = {}) {
    RegistrationVerdict v{RegistrationStatus::Aligned, t, {}};
    const double theta = std::abs(rad2deg(t.theta));
    const double shift = t.translation_norm();
    const double scale = std::max(std::abs(t.s_x - 1.0), std::abs(t.s_y - 1.0));
    if (!t.valid()) {
        v.status = RegistrationStatus::Failure;
        v.reason = "invalid transform";
    } else if (theta > rules.max_theta_deg || shift > rules.max_shift_mm || scale > rules.max_scale) {
        v.status = RegistrationStatus::Failure;
        v.reason = "deviation beyond recoverable range";
    } else if (score < rules.min_score && residual > rules.max_residual) {
        v.status = RegistrationStatus::Failure;
        v.reason = "outline not found";
    } else if (theta > rules.nominal_theta_deg || shift > rules.nominal_shift_mm || scale > rules.nominal_scale) {
        v.status = RegistrationStatus::Corrected;
    }
    return v;
}

struct RegistrationOptions {
    CannyOptions canny;
    double match_dilation_px = 2.0;
    std::vector<double> template_angles_deg{0.0, 2.5, -2.5, 5.0, -5.0, 7.5, -7.5, 10.0, -10.0};
    double sample_step_mm = 0.5;
    IcpOptions icp;
    std::vector<double> restart_angles_deg{5.0, -5.0, 10.0, -10.0};
    double accept_residual = 0.05;  // mm^2; restarts are tried only above this
    RegistrationRules rules;
};

struct RegistrationResult {
    MatchResult match;
    Point2 coarse_shift;       // mm, from template matching
    double coarse_angle = 0.0;  // deg, orientation of the best-matching template
    IcpResult icp;
    Point2 pivot;
    RegistrationVerdict verdict;
    std::size_t edge_points = 0;
};

/// Outer boundary of the printed outline: the wall centreline offset by half a line width.
inline std::vector<Polyline> physical_outline(const std::vector<Polyline>& loops, double line_width) {
    std::vector<Polyline> out;
    for (const auto& l : loops) out.push_back(offset_loop(l, line_width / 2));
    return out;
}

/// Template matching then ICP of the layer outline against the top-view edges. `loops` are the
/// outer-wall centrelines in mm; `pivot` is the point corrections rotate and scale about.
inline RegistrationResult register_layer(const PlaneView& view, const std::vector<Polyline>& loops, double line_width,
                                         const Point2& pivot, const RegistrationOptions& opt = {}) {
    RegistrationResult r;
    r.pivot = pivot;
    const auto boundary = physical_outline(loops, line_width);
    const Mask edges = canny(view.image, opt.canny);
    const Mask search = opt.match_dilation_px > 0 ? dilate(edges, opt.match_dilation_px) : edges;
    // one template per orientation; the sliding search itself is translation-only
    const std::vector<double> angles = opt.template_angles_deg.empty() ? std::vector<double>{0.0} : opt.template_angles_deg;
    for (double a : angles) {
        const Transform2D rot{deg2rad(a), 1.0, 1.0, 0.0, 0.0};
        std::vector<Polyline> turned = boundary;
        for (auto& l : turned)
            for (auto& q : l) q = rot.apply(q, pivot);
        const auto tmpl = rasterize_template(turned, view.px_per_mm);
        const auto m = match_template(search, tmpl);
        if (a == angles.front() || m.score > r.match.score) {
            r.match = m;
            r.coarse_angle = a;
            const Point2 expected = view.world_to_pixel(tmpl.origin);
            r.coarse_shift = {(m.x - expected.x) / view.px_per_mm, -(m.y - expected.y) / view.px_per_mm};
        }
    }

    std::vector<Point2> source;
    for (int y = 0; y < edges.height(); ++y)
        for (int x = 0; x < edges.width(); ++x)
            if (edges(x, y)) source.push_back(view.pixel_to_world(x, y));
    r.edge_points = source.size();
    std::vector<Point2> target;
    for (const auto& l : boundary) {
        auto s = resample_loop(l, opt.sample_step_mm);
        target.insert(target.end(), s.begin(), s.end());
    }
    IcpOptions icp_opt = opt.icp;
    icp_opt.px_per_mm = view.px_per_mm;
    const Transform2D init{deg2rad(r.coarse_angle), 1.0, 1.0, r.coarse_shift.x, r.coarse_shift.y};
    r.icp = icp_register(source, target, init, pivot, icp_opt);
    if (r.icp.residual > opt.accept_residual)
        for (double a : opt.restart_angles_deg) {
            Transform2D start = init;
            start.theta = deg2rad(r.coarse_angle + a);
            try {
                auto alt = icp_register(source, target, start, pivot, icp_opt);
                if (alt.residual < r.icp.residual) r.icp = alt;
            } catch (const IcpError&) {
            }
            if (r.icp.residual <= opt.accept_residual) break;
        }
    r.verdict = registration_verdict(r.icp.transform, r.icp.residual, r.match.score, opt.rules);
    return r;
}

}  // namespace layerscope
