#pragma once

// Synthetic camera frames of a print in progress, with injectable failures and exact ground truth.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "anomaly.hpp"
#include "errors.hpp"
#include "gcode.hpp"
#include "geometry.hpp"
#include "image.hpp"
#include "projection.hpp"
#include "registration.hpp"
#include "transform2d.hpp"

namespace layerscope::synth {

struct Camera {
    CameraIntrinsics K;
    CameraPose pose;

    /// 1280x720, f = 1500 px, 200 mm in front of the plate and 230 mm above it, all markers in view.
    static Camera standard() {
        Camera c;
        c.K = CameraIntrinsics{1500, 1500, 640, 360, 1280, 720};
        c.pose = CameraPose::look_at({0, -200, 230}, {0, 0, 0});
        return c;
    }
};

/// Base gray levels and noise.
struct Look {
    double background = 40;
    double plate = 70;
    double marker = 25;
    double marker_core = 200;
    double wall = 120;
    double wall_ripple = 4;  // amplitude of the layer-line modulation on walls
    double outer_wall = 215;
    double inner_wall = 200;
    double infill = 185;
    double skirt = 170;
    double support = 150;
    double interior = 105;  // seen between sparse infill lines
    double hole = 55;
    double foreign_light = 240;
    double foreign_dark = 140;
    double noise_sigma = 5;
};

// Injections

enum class InjectionKind { None, Shift, Rotate, Scale, MissingLayer, InfillGap, HeightError, ForeignTexture };

inline const char* to_string(InjectionKind k) noexcept {
    switch (k) {
        case InjectionKind::None: return "none";
        case InjectionKind::Shift: return "shift";
        case InjectionKind::Rotate: return "rotate";
        case InjectionKind::Scale: return "scale";
        case InjectionKind::MissingLayer: return "missing";
        case InjectionKind::InfillGap: return "gap";
        case InjectionKind::HeightError: return "height";
        case InjectionKind::ForeignTexture: return "foreign";
    }
    return "?";
}

/// One failure over an inclusive layer range. Parameter meaning by kind:
///   Shift: dx, dy (mm)       Rotate: angle (deg)         Scale: factor
///   InfillGap: area fraction of the infill mask, at `location`
///   HeightError: delta (mm) over the column span [span_begin, span_end) of the side band
///   ForeignTexture: patch diameter (mm), at `location`
/// `location` is relative to the infill bounding box ((0,0) = min corner).
/// Shift, Rotate and Scale displace everything deposited so far when layer `first` completes.
struct Injection {
    InjectionKind kind = InjectionKind::None;
    double a = 0.0;
    double b = 0.0;
    Point2 location{0.5, 0.5};
    double span_begin = 0.0;
    double span_end = 1.0;
    int first = 0;
    int last = 0;

    bool covers(int layer) const noexcept { return kind != InjectionKind::None && layer >= first && layer <= last; }
    bool displaces() const noexcept {
        return kind == InjectionKind::Shift || kind == InjectionKind::Rotate || kind == InjectionKind::Scale;
    }

    Transform2D transform() const noexcept {
        switch (kind) {
            case InjectionKind::Shift: return {0.0, 1.0, 1.0, a, b};
            case InjectionKind::Rotate: return {deg2rad(a), 1.0, 1.0, 0.0, 0.0};
            case InjectionKind::Scale: return {0.0, a, a, 0.0, 0.0};
            default: return {};
        }
    }

    void validate() const {
        if (first < 0 || last < first) throw ConfigError("injection layer range is invalid");
        switch (kind) {
            case InjectionKind::Shift:
            case InjectionKind::Rotate:
                if (!std::isfinite(a) || !std::isfinite(b)) throw ConfigError("injection parameters must be finite");
                break;
            case InjectionKind::Scale:
                if (!(a > 0) || !std::isfinite(a)) throw ConfigError("scale must be positive");
                break;
            case InjectionKind::InfillGap:
                if (!(a > 0 && a <= 1)) throw ConfigError("gap fraction must be in (0, 1]");
                break;
            case InjectionKind::HeightError:
                if (!std::isfinite(a)) throw ConfigError("height error must be finite");
                if (!(span_begin >= 0 && span_end <= 1 && span_begin < span_end)) throw ConfigError("column span must lie in [0, 1]");
                break;
            case InjectionKind::ForeignTexture:
                if (!(a > 0)) throw ConfigError("patch diameter must be positive");
                break;
            default: break;
        }
        if (displaces() && first != last) throw ConfigError("displacements happen at a single layer");
        if (location.x < 0 || location.x > 1 || location.y < 0 || location.y > 1)
            throw ConfigError("location must be relative to the infill box");
    }
};

namespace detail {

inline std::vector<double> parse_numbers(std::string_view s) {
    std::vector<double> out;
    while (!s.empty()) {
        const auto comma = s.find(',');
        auto tok = gcode::detail::trim(s.substr(0, comma));
        double v = 0;
        if (!gcode::detail::parse_double(tok, v)) throw ConfigError("bad number \"" + std::string(tok) + "\" in injection");
        out.push_back(v);
        if (comma == std::string_view::npos) break;
        s.remove_prefix(comma + 1);
    }
    return out;
}

inline int parse_layer(std::string_view s) {
    s = gcode::detail::trim(s);
    int v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("bad layer index \"" + std::string(s) + "\"");
    return v;
}

}  // namespace detail

/// Parses "kind[:p1,p2,...]@first[..last]", e.g. "shift:4,0@5", "gap:0.2@3", "missing@10..12",
/// "height:-0.6,0.25,0.5@7", "gap:0.16,0.3,0.7@4", "foreign:6@9", "rotate:5@2", "scale:1.05@2", "none".
inline Injection parse_injection(std::string_view spec) {
    spec = gcode::detail::trim(spec);
    Injection inj;
    if (spec == "none" || spec.empty()) return inj;
    const auto at = spec.find('@');
    if (at == std::string_view::npos) throw ConfigError("injection \"" + std::string(spec) + "\" needs @layer");
    const auto head = spec.substr(0, at);
    const auto range = spec.substr(at + 1);
    const auto colon = head.find(':');
    const std::string name(gcode::detail::trim(head.substr(0, colon)));
    const auto nums = colon == std::string_view::npos ? std::vector<double>{} : detail::parse_numbers(head.substr(colon + 1));
    if (const auto dots = range.find(".."); dots != std::string_view::npos) {
        inj.first = detail::parse_layer(range.substr(0, dots));
        inj.last = detail::parse_layer(range.substr(dots + 2));
    } else {
        inj.first = inj.last = detail::parse_layer(range);
    }
    auto need = [&](std::size_t lo, std::size_t hi) {
        if (nums.size() < lo || nums.size() > hi)
            throw ConfigError("injection \"" + name + "\" takes " + std::to_string(lo) + ".." + std::to_string(hi) + " parameters");
    };
    if (name == "shift") {
        need(2, 2);
        inj.kind = InjectionKind::Shift;
        inj.a = nums[0];
        inj.b = nums[1];
    } else if (name == "rotate") {
        need(1, 1);
        inj.kind = InjectionKind::Rotate;
        inj.a = nums[0];
    } else if (name == "scale") {
        need(1, 1);
        inj.kind = InjectionKind::Scale;
        inj.a = nums[0];
    } else if (name == "missing") {
        need(0, 0);
        inj.kind = InjectionKind::MissingLayer;
    } else if (name == "gap" || name == "foreign") {
        need(1, 3);
        if (nums.size() == 2) throw ConfigError("location needs both coordinates");
        inj.kind = name == "gap" ? InjectionKind::InfillGap : InjectionKind::ForeignTexture;
        inj.a = nums[0];
        if (nums.size() == 3) inj.location = {nums[1], nums[2]};
    } else if (name == "height") {
        need(1, 3);
        if (nums.size() == 2) throw ConfigError("column span needs both ends");
        inj.kind = InjectionKind::HeightError;
        inj.a = nums[0];
        if (nums.size() == 3) {
            inj.span_begin = nums[1];
            inj.span_end = nums[2];
        }
    } else {
        throw ConfigError("unknown injection kind \"" + name + "\"");
    }
    inj.validate();
    return inj;
}

inline std::string to_string(const Injection& inj) {
    using gcode::format_number;
    if (inj.kind == InjectionKind::None) return "none";
    std::string s = to_string(inj.kind);
    std::vector<double> p;
    switch (inj.kind) {
        case InjectionKind::Shift: p = {inj.a, inj.b}; break;
        case InjectionKind::Rotate:
        case InjectionKind::Scale: p = {inj.a}; break;
        case InjectionKind::InfillGap:
        case InjectionKind::ForeignTexture: p = {inj.a, inj.location.x, inj.location.y}; break;
        case InjectionKind::HeightError: p = {inj.a, inj.span_begin, inj.span_end}; break;
        default: break;
    }
    for (std::size_t i = 0; i < p.size(); ++i) s += (i ? "," : ":") + format_number(p[i]);
    s += "@" + std::to_string(inj.first);
    if (inj.last != inj.first) s += ".." + std::to_string(inj.last);
    return s;
}

/// Semicolon-separated list. Two injections of the same kind may not overlap.
inline std::vector<Injection> parse_injections(std::string_view spec) {
    std::vector<Injection> out;
    while (!spec.empty()) {
        const auto semi = spec.find(';');
        auto inj = parse_injection(spec.substr(0, semi));
        if (inj.kind != InjectionKind::None) {
            for (const auto& o : out)
                if (o.kind == inj.kind && o.first <= inj.last && inj.first <= o.last)
                    throw ConfigError("overlapping injections of kind " + std::string(to_string(inj.kind)));
            out.push_back(inj);
        }
        if (semi == std::string_view::npos) break;
        spec.remove_prefix(semi + 1);
    }
    return out;
}

// Ground truth

struct Truth {
    int layer = 0;
    bool deposited = true;
    /// Placement of the top deposit relative to the toolpath it was printed from.
    Transform2D transform;
    Point2 pivot;
    double nominal_top_z = 0.0;  // mm, commanded z of this layer
    double top_z = 0.0;          // mm, actual top of the stack
    double anomaly_fraction = 0.0;  // injected hole pixels / infill-mask pixels in the top view grid
    Mask anomaly_mask;              // in the top view grid; empty without an infill gap
    std::vector<std::string> injections;  // active on this layer
};

struct Frame {
    GrayImage image;
    Truth truth;
};

struct SimOptions {
    Camera camera = Camera::standard();
    Look look;
    std::uint64_t seed = 1;
    double top_view_px_per_mm = 5.26;  // grid in which the anomaly truth is counted
    std::optional<Box2> top_view_area;  // default: printable area of the standard plate
    double raster_px_per_mm = 12.0;     // resolution of the rendered layer surfaces
};

/// Top-view pixel grid matching what the pipeline builds for a layer plane.
inline PlaneView top_view_grid(double plane_z, double px_per_mm, const std::optional<Box2>& area) {
    const Box2 a = area.value_or(MarkerPlate::standard().printable_area());
    PlaneView v;
    v.px_per_mm = px_per_mm;
    v.origin = {a.min.x, a.max.y};
    v.plane_z = plane_z;
    v.image = GrayImage(view_extent_px(a.width(), px_per_mm), view_extent_px(a.height(), px_per_mm), 0);
    return v;
}

/// Axis-aligned square hole whose intersection with `mask` covers `fraction` of the mask pixels
/// as closely as the pixel grid allows. Returns the square and the achieved mask of hole pixels.
inline std::pair<Box2, Mask> size_gap(const Mask& mask, const PlaneView& grid, double fraction, const Point2& location) {
    PixelBox mb;
    std::size_t total = 0;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask(x, y)) {
                mb.extend(x, y);
                ++total;
            }
    if (!total) throw ConfigError("layer has no infill to place a gap in");
    const Point2 lo = grid.pixel_to_world(mb.x0, mb.y1), hi = grid.pixel_to_world(mb.x1, mb.y0);
    const Point2 c{lo.x + location.x * (hi.x - lo.x), lo.y + location.y * (hi.y - lo.y)};
    auto square = [&](double side) { return Box2{{c.x - side / 2, c.y - side / 2}, {c.x + side / 2, c.y + side / 2}}; };
    auto count = [&](double side) {
        const Box2 b = square(side);
        std::size_t n = 0;
        for (int y = 0; y < mask.height(); ++y)
            for (int x = 0; x < mask.width(); ++x)
                if (mask(x, y) && b.contains(grid.pixel_to_world(x, y))) ++n;
        return n;
    };
    const double target = fraction * static_cast<double>(total);
    double lo_s = 0.0, hi_s = 2.0 * std::hypot(hi.x - lo.x, hi.y - lo.y);
    for (int i = 0; i < 40; ++i) {
        const double mid = 0.5 * (lo_s + hi_s);
        (static_cast<double>(count(mid)) < target ? lo_s : hi_s) = mid;
    }
    const double side = std::abs(static_cast<double>(count(lo_s)) - target) <= std::abs(static_cast<double>(count(hi_s)) - target) ? lo_s : hi_s;
    const Box2 b = square(side);
    Mask hole(mask.width(), mask.height(), 0);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask(x, y) && b.contains(grid.pixel_to_world(x, y))) hole(x, y) = 1;
    return {b, hole};
}

/// Physical model of the part on the plate. Layers are deposited where they are commanded, then
/// photographed by a fixed camera.
class Simulator {
public:
    explicit Simulator(std::vector<Injection> injections = {}, SimOptions opt = {})
        : inj_(std::move(injections)), opt_(std::move(opt)) {
        for (const auto& i : inj_) i.validate();
        opt_.camera.K.validate();
    }

    const SimOptions& options() const noexcept { return opt_; }
    const std::vector<Injection>& injections() const noexcept { return inj_; }

    /// Deposits `commanded` (the toolpath actually sent for its layer) and applies the
    /// injections of that layer. Returns the truth record of the resulting state.
    Truth deposit(const gcode::Layer& commanded) {
        Truth t;
        t.layer = commanded.index;
        t.nominal_top_z = commanded.z;
        t.pivot = has_outline(commanded) ? gcode::layer_pivot(commanded) : Point2{};
        for (const auto& i : inj_)
            if (i.covers(commanded.index)) t.injections.push_back(to_string(i));

        const double h = commanded.layer_height > 0 ? commanded.layer_height : 0.2;
        const bool missing = active(InjectionKind::MissingLayer, commanded.index) != nullptr;
        if (!missing && has_outline(commanded)) {
            Deposit d;
            d.layer = commanded;
            d.width = commanded.params.line_width > 0 ? commanded.params.line_width : 0.4;
            d.outline = physical_outline(gcode::layer_outline(commanded), d.width);
            d.z0 = top_z_;
            d.z1 = std::max(commanded.z, top_z_ + 1e-3);
            if (const auto* e = active(InjectionKind::HeightError, commanded.index)) d.z1 = std::max(top_z_ + 1e-3, commanded.z + e->a);
            d.layer_height = h;
            if (const auto* g = active(InjectionKind::InfillGap, commanded.index)) {
                const PlaneView grid = top_view_grid(commanded.z, opt_.top_view_px_per_mm, opt_.top_view_area);
                const Mask m = infill_mask(commanded, grid);
                auto [box, hole] = size_gap(m, grid, g->a, g->location);
                d.gap = box;
                const std::size_t n = count_set(m);
                t.anomaly_fraction = n ? static_cast<double>(count_set(hole)) / static_cast<double>(n) : 0.0;
                t.anomaly_mask = std::move(hole);
            }
            if (const auto* f = active(InjectionKind::ForeignTexture, commanded.index)) {
                const PlaneView grid = top_view_grid(commanded.z, opt_.top_view_px_per_mm, opt_.top_view_area);
                const Mask m = infill_mask(commanded, grid);
                PixelBox mb;
                for (int y = 0; y < m.height(); ++y)
                    for (int x = 0; x < m.width(); ++x)
                        if (m(x, y)) mb.extend(x, y);
                Box2 area = bounds(d.outline);
                if (!mb.empty()) area = Box2{grid.pixel_to_world(mb.x0, mb.y1), grid.pixel_to_world(mb.x1, mb.y0)};
                d.patch_center = {area.min.x + f->location.x * area.width(), area.min.y + f->location.y * area.height()};
                d.patch_radius = f->a / 2;
            }
            top_z_ = d.z1;
            stack_.push_back(std::move(d));
        } else {
            t.deposited = false;
        }

        for (const auto& i : inj_)
            if (i.displaces() && i.first == commanded.index) {
                const Transform2D tr = i.transform();
                for (auto& d : stack_) displace(d, tr, t.pivot);
                t.transform = compose(tr, t.pivot, t.transform, t.pivot);
            }
        t.top_z = top_z_;
        return t;
    }

    /// Deposits the layer, then photographs the plate.
    Frame print_layer(const gcode::Layer& commanded) {
        Frame f;
        f.truth = deposit(commanded);
        f.image = render(commanded.index);
        return f;
    }

    /// Current camera frame. `frame_index` only selects the noise stream.
    GrayImage render(int frame_index) const {
        const auto& K = opt_.camera.K;
        GrayImage out(K.image_width, K.image_height, 0);
        RealImage img = bed();
        for (const auto& slab : slabs()) {
            draw_walls(img, slab);
            draw_top(img, slab);
        }
        std::mt19937_64 rng(opt_.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(frame_index + 1)));
        std::normal_distribution<double> noise(0.0, opt_.look.noise_sigma);
        for (std::size_t i = 0; i < img.size(); ++i) out.data()[i] = clamp_to_u8(img.data()[i] + noise(rng));
        return out;
    }

    double top_z() const noexcept { return top_z_; }
    std::size_t deposits() const noexcept { return stack_.size(); }

private:
    struct Deposit {
        gcode::Layer layer;  // segment geometry after any displacement
        std::vector<Polyline> outline;
        double width = 0.4;
        double z0 = 0.0, z1 = 0.0;
        double layer_height = 0.2;
        std::optional<Box2> gap;
        Transform2D gap_placement;  // displacement applied after the gap was cut
        Point2 gap_pivot;
        Point2 patch_center;
        double patch_radius = 0.0;
    };

    struct Slab {
        std::vector<Polyline> outline;
        double z0 = 0.0, z1 = 0.0, layer_height = 0.2;
        const Deposit* top = nullptr;
    };

    static bool has_outline(const gcode::Layer& l) {
        for (const auto& s : l.segments)
            if (s.extruding() && s.category == gcode::Category::OuterWall) return true;
        return false;
    }

    const Injection* active(InjectionKind k, int layer) const {
        for (const auto& i : inj_)
            if (i.kind == k && i.covers(layer)) return &i;
        return nullptr;
    }

    static void displace(Deposit& d, const Transform2D& t, const Point2& pivot) {
        for (auto& loop : d.outline)
            for (auto& p : loop) p = t.apply(p, pivot);
        for (auto& s : d.layer.segments) {
            s.start = t.apply(s.start, pivot);
            s.end = t.apply(s.end, pivot);
        }
        if (d.gap) {
            // the gap is kept in its cut frame and mapped at render time
            d.gap_placement = compose(t, pivot, d.gap_placement, d.gap_pivot);
            d.gap_pivot = pivot;
        }
        d.patch_center = t.apply(d.patch_center, pivot);
        d.width *= std::sqrt(t.s_x * t.s_y);
    }

    /// Inverse of a similarity, about the same pivot.
    static Transform2D inverse_about_pivot(const Transform2D& t) {
        const double c = std::cos(t.theta), sn = std::sin(t.theta), s = t.s_x;
        const Point2 rt{c * t.t_x + sn * t.t_y, -sn * t.t_x + c * t.t_y};
        return {-t.theta, 1.0 / s, 1.0 / s, -s * rt.x, -s * rt.y};
    }

    /// Single transform about `pivot` equivalent to applying `first` (about `p0`) then `second`.
    static Transform2D compose(const Transform2D& second, const Point2& pivot, const Transform2D& first, const Point2& p0) {
        // both are similarities; recover the composite from its action on two points
        auto both = [&](const Point2& p) { return second.apply(first.apply(p, p0), pivot); };
        const Point2 a = both(pivot), b = both(pivot + Point2{1.0, 0.0});
        const Point2 col = b - a;
        const double s = norm(col), theta = std::atan2(col.y, col.x);
        return {theta, s, s, (a.x - pivot.x) / s, (a.y - pivot.y) / s};
    }

    std::vector<Slab> slabs() const {
        std::vector<Slab> out;
        for (const auto& d : stack_) {
            if (!out.empty() && out.back().outline == d.outline) {
                out.back().z1 = d.z1;
                out.back().top = &d;
                continue;
            }
            out.push_back({d.outline, d.z0, d.z1, d.layer_height, &d});
        }
        return out;
    }

    Eigen::Vector3d ray(double u, double v) const {
        const Point2 n = pixel_to_normalized({u, v}, opt_.camera.K);
        return opt_.camera.pose.R.transpose() * Eigen::Vector3d(n.x, n.y, 1.0);
    }

    const RealImage& bed() const {
        if (bed_.width()) return bed_;
        const auto& K = opt_.camera.K;
        const auto& L = opt_.look;
        const auto plate = MarkerPlate::standard();
        const Eigen::Vector3d c = opt_.camera.pose.center();
        bed_ = RealImage(K.image_width, K.image_height, L.background);
        for (int v = 0; v < K.image_height; ++v)
            for (int u = 0; u < K.image_width; ++u) {
                const Eigen::Vector3d d = ray(u, v);
                if (d.z() >= -1e-12) continue;
                const double s = -c.z() / d.z();
                const Point2 p{c.x() + s * d.x(), c.y() + s * d.y()};
                if (std::abs(p.x) > plate.plate_size / 2 || std::abs(p.y) > plate.plate_size / 2) continue;
                double val = L.plate;
                for (const auto& m : plate.markers) {
                    const double dx = std::abs(p.x - m.center.x), dy = std::abs(p.y - m.center.y);
                    if (dx <= m.side / 2 && dy <= m.side / 2) val = (dx <= m.side / 6 && dy <= m.side / 6) ? L.marker_core : L.marker;
                }
                bed_(u, v) = val;
            }
        return bed_;
    }

    template <typename Fn>
    void fill_projected(RealImage& img, const std::vector<Point2>& poly, Fn&& shade) const {
        Box2 b = bounds(poly);
        const int x0 = std::max(0, static_cast<int>(std::floor(b.min.x))), x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(b.max.x)));
        const int y0 = std::max(0, static_cast<int>(std::floor(b.min.y))), y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(b.max.y)));
        for (int v = y0; v <= y1; ++v)
            for (int u = x0; u <= x1; ++u) shade(u, v);
    }

    void draw_walls(RealImage& img, const Slab& slab) const {
        const auto& cam = opt_.camera;
        const Eigen::Vector3d c = cam.pose.center();
        struct Face {
            Point2 a, b;
            double dist;
        };
        std::vector<Face> faces;
        for (const auto& loop : slab.outline) {
            const bool ccw = signed_area(loop) > 0;
            for (std::size_t i = 0; i < loop.size(); ++i) {
                const Point2 a = loop[i], b = loop[(i + 1) % loop.size()];
                const Point2 e = b - a;
                if (norm(e) < 1e-9) continue;
                Point2 n{e.y, -e.x};  // outward for a counter-clockwise loop
                if (!ccw) n = n * -1.0;
                const Point2 mid = (a + b) * 0.5;
                if (dot(n, Point2{c.x(), c.y()} - mid) <= 0) continue;
                faces.push_back({a, b, distance(mid, {c.x(), c.y()})});
            }
        }
        std::sort(faces.begin(), faces.end(), [](const Face& p, const Face& q) { return p.dist > q.dist; });
        const auto& L = opt_.look;
        for (const auto& f : faces) {
            std::vector<Point2> quad{project_point({f.a.x, f.a.y, slab.z0}, cam.K, cam.pose), project_point({f.b.x, f.b.y, slab.z0}, cam.K, cam.pose),
                                     project_point({f.b.x, f.b.y, slab.z1}, cam.K, cam.pose), project_point({f.a.x, f.a.y, slab.z1}, cam.K, cam.pose)};
            const Point2 e = f.b - f.a;
            const Point2 n{e.y, -e.x};
            fill_projected(img, quad, [&](int u, int v) {
                if (!point_in_polygon({static_cast<double>(u), static_cast<double>(v)}, quad)) return;
                const Eigen::Vector3d d = ray(u, v);
                const double den = n.x * d.x() + n.y * d.y();
                if (std::abs(den) < 1e-12) return;
                const double s = (n.x * (f.a.x - c.x()) + n.y * (f.a.y - c.y())) / den;
                const double z = std::clamp(c.z() + s * d.z(), slab.z0, slab.z1);
                img(u, v) = L.wall + L.wall_ripple * std::cos(2 * std::numbers::pi * z / slab.layer_height);
            });
        }
    }

    /// Surface raster of one deposit in world coordinates.
    PlaneView surface(const Deposit& d) const {
        const auto& L = opt_.look;
        const double ppm = opt_.raster_px_per_mm;
        Box2 b = bounds(d.outline);
        b.min = b.min - Point2{1.0, 1.0};
        b.max = b.max + Point2{1.0, 1.0};
        PlaneView r;
        r.px_per_mm = ppm;
        r.origin = {b.min.x, b.max.y};
        r.image = GrayImage(view_extent_px(b.width(), ppm), view_extent_px(b.height(), ppm), 0);
        for (const auto& loop : d.outline) {
            std::vector<double> xs, ys;
            for (const auto& p : loop) {
                const Point2 q = r.world_to_pixel(p);
                xs.push_back(q.x);
                ys.push_back(q.y);
            }
            fill_polygon(r.image, xs, ys, clamp_to_u8(L.interior));
        }
        auto shade = [&](gcode::Category c) {
            switch (c) {
                case gcode::Category::Skirt: return L.skirt;
                case gcode::Category::OuterWall: return L.outer_wall;
                case gcode::Category::InnerWall: return L.inner_wall;
                case gcode::Category::Infill: return L.infill;
                case gcode::Category::Support: return L.support;
                default: return L.interior;
            }
        };
        for (const auto& s : d.layer.segments) {
            if (!s.extruding()) continue;
            const Point2 a = r.world_to_pixel(s.start), e = r.world_to_pixel(s.end);
            stroke_segment(r.image, a.x, a.y, e.x, e.y, 0.5 * d.width * ppm, clamp_to_u8(shade(s.category)));
        }
        if (d.gap) {
            // cut where the commanded infill mask was, in the frame the gap was cut in
            PlaneView grid = r;
            const Transform2D inv = inverse_about_pivot(d.gap_placement);
            Mask m = infill_mask(undisplaced(d), grid);
            for (int y = 0; y < r.image.height(); ++y)
                for (int x = 0; x < r.image.width(); ++x) {
                    const Point2 w = r.pixel_to_world(x, y);
                    const Point2 p = inv.apply(w, d.gap_pivot);
                    const Point2 q = r.world_to_pixel(p);
                    const int qx = static_cast<int>(std::lround(q.x)), qy = static_cast<int>(std::lround(q.y));
                    if (!m.contains(qx, qy) || !m(qx, qy) || !d.gap->contains(p)) continue;
                    r.image(x, y) = clamp_to_u8(L.hole);
                }
        }
        if (d.patch_radius > 0) {
            const double cell = 0.8;
            for (int y = 0; y < r.image.height(); ++y)
                for (int x = 0; x < r.image.width(); ++x) {
                    const Point2 w = r.pixel_to_world(x, y);
                    if (distance(w, d.patch_center) > d.patch_radius) continue;
                    const bool light = (static_cast<long>(std::floor(w.x / cell)) + static_cast<long>(std::floor(w.y / cell))) % 2 == 0;
                    r.image(x, y) = clamp_to_u8(light ? L.foreign_light : L.foreign_dark);
                }
        }
        return r;
    }

    /// The deposit's segments mapped back to where they were commanded.
    gcode::Layer undisplaced(const Deposit& d) const {
        gcode::Layer l = d.layer;
        const Transform2D inv = inverse_about_pivot(d.gap_placement);
        for (auto& s : l.segments) {
            s.start = inv.apply(s.start, d.gap_pivot);
            s.end = inv.apply(s.end, d.gap_pivot);
        }
        return l;
    }

    void draw_top(RealImage& img, const Slab& slab) const {
        const auto& cam = opt_.camera;
        const Eigen::Vector3d c = cam.pose.center();
        const PlaneView tex = surface(*slab.top);
        for (const auto& loop : slab.outline) {
            std::vector<Point2> poly;
            for (const auto& p : loop) poly.push_back(project_point({p.x, p.y, slab.z1}, cam.K, cam.pose));
            fill_projected(img, poly, [&](int u, int v) {
                const Eigen::Vector3d d = ray(u, v);
                if (d.z() >= -1e-12) return;
                const double s = (slab.z1 - c.z()) / d.z();
                const Point2 w{c.x() + s * d.x(), c.y() + s * d.y()};
                int inside = 0;
                for (const auto& l : slab.outline) inside += point_in_polygon(w, l);
                if (inside % 2 == 0) return;
                const Point2 q = tex.world_to_pixel(w);
                img(u, v) = sample_bilinear(tex.image, q.x, q.y, opt_.look.interior);
            });
        }
    }

    std::vector<Injection> inj_;
    SimOptions opt_;
    std::vector<Deposit> stack_;
    double top_z_ = 0.0;
    mutable RealImage bed_;
};

/// Frame of layer `layer` of `program` printed without host corrections.
inline Frame render_views(const gcode::Program& program, int layer, const std::vector<Injection>& injections,
                          const SimOptions& opt = {}) {
    if (layer < 0 || layer >= static_cast<int>(program.layers.size())) throw ConfigError("layer index out of range");
    Simulator sim(injections, opt);
    for (int k = 0; k < layer; ++k) sim.deposit(program.layers[k]);
    return sim.print_layer(program.layers[layer]);
}

// Side band rendered directly in unwrapped coordinates

struct SideBand {
    PlaneView view;
    std::vector<double> true_heights;  // mm per column
};

/// Band of `columns` columns and `band_mm` height whose material reaches `heights[c]` in column c.
/// Boundary pixels are area-weighted between wall and surface intensity.
inline SideBand render_side_band(const std::vector<double>& heights, double band_mm, std::uint64_t seed,
                                 const Look& look = {}, double px_per_mm = 5.26, double surface = 200) {
    if (heights.empty() || !(band_mm > 0) || !(px_per_mm > 0)) throw ConfigError("invalid side band");
    SideBand b;
    b.true_heights = heights;
    b.view.px_per_mm = px_per_mm;
    const int rows = view_extent_px(band_mm, px_per_mm);
    b.view.image = GrayImage(static_cast<int>(heights.size()), rows, 0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, look.noise_sigma);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < static_cast<int>(heights.size()); ++c) {
            // pixel r spans z in [(r - 0.5), (r + 0.5)] / px_per_mm
            const double fill = std::clamp(heights[c] * px_per_mm - (r - 0.5), 0.0, 1.0);
            b.view.image(c, r) = clamp_to_u8(fill * look.wall + (1 - fill) * surface + noise(rng));
        }
    return b;
}

/// Side band of layer `layer` (0-based) with nominal layer height `h`, as the pseudo side view
/// lays it out ((layer + 2) * h tall), with MissingLayer and HeightError injections applied.
inline SideBand side_band_for_layer(int layer, double h, int columns, const std::vector<Injection>& injections,
                                    std::uint64_t seed, const Look& look = {}, double px_per_mm = 5.26,
                                    std::optional<double> band_mm = std::nullopt) {
    if (layer < 0 || !(h > 0) || columns < 1) throw ConfigError("invalid side band request");
    int missing = 0;
    for (int k = 0; k <= layer; ++k)
        for (const auto& i : injections)
            if (i.kind == InjectionKind::MissingLayer && i.covers(k) && i.last >= layer) ++missing;
    std::vector<double> heights(columns, (layer + 1 - missing) * h);
    for (const auto& i : injections)
        if (i.kind == InjectionKind::HeightError && i.covers(layer)) {
            const int c0 = static_cast<int>(std::lround(i.span_begin * columns)), c1 = static_cast<int>(std::lround(i.span_end * columns));
            for (int c = c0; c < c1; ++c) heights[c] += i.a;
        }
    return render_side_band(heights, band_mm.value_or((layer + 2) * h), seed, look, px_per_mm);
}

}  // namespace layerscope::synth
