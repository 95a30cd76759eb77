#pragma once

// Synthetic slicer output: a low-poly fox-head prism with perimeter walls and grid infill.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gcode.hpp"
#include "geometry.hpp"

namespace layerscope {

struct FixtureOptions {
    int layers = 175;
    double layer_height = 0.4;
    double line_width = 0.4;
    int walls = 8;
    double infill_density = 0.3;
    double infill_angle_deg = 45.0;  // first grid direction; the second is perpendicular
    double nozzle_temp = 200.0;
    double bed_temp = 60.0;
    double filament_diameter = 1.75;
    double print_feed = 1800.0;  // mm/min
    double travel_feed = 6000.0;
};

/// Part footprint in mm, counter-clockwise, centred near the origin (42 x 51 mm).
inline Polyline fox_outline() {
    return {{0.0, -25.5}, {11.0, -20.0}, {18.0, -9.0}, {21.0, 5.0},  {21.0, 25.5},  {10.0, 17.5}, {0.0, 19.0},
            {-10.0, 17.5}, {-21.0, 25.5}, {-21.0, 5.0}, {-18.0, -9.0}, {-11.0, -20.0}};
}

/// Inside parts of the infinite line through `p` along `dir`, clipped by a closed polygon,
/// as parameter intervals along `dir`.
inline std::vector<std::pair<double, double>> clip_line(const Point2& p, const Point2& dir, const Polyline& poly) {
    std::vector<double> ts;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point2 a = poly[i], b = poly[(i + 1) % n];
        const Point2 e = b - a;
        const double den = cross(dir, e);
        if (std::abs(den) < 1e-12) continue;
        const double t = cross(a - p, e) / den;
        const double u = cross(a - p, dir) / den;
        // half-open in u so a vertex on the line is counted once
        if (u >= 0.0 && u < 1.0) ts.push_back(t);
    }
    std::sort(ts.begin(), ts.end());
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i + 1 < ts.size(); i += 2)
        if (ts[i + 1] - ts[i] > 1e-9) out.emplace_back(ts[i], ts[i + 1]);
    return out;
}

/// Complete G-code for the fixture: header, `layers` identical layers, footer.
inline std::string fixture_gcode(const FixtureOptions& opt = {}, const Polyline& footprint = fox_outline()) {
    if (opt.layers < 1 || !(opt.layer_height > 0) || !(opt.line_width > 0) || opt.walls < 1 ||
        !(opt.infill_density > 0 && opt.infill_density <= 1))
        throw ConfigError("invalid fixture options");
    const double w = opt.line_width, h = opt.layer_height;
    const double e_per_mm = w * h / (std::numbers::pi * 0.25 * opt.filament_diameter * opt.filament_diameter);
    using gcode::format_number;
    auto fmt = [](double v) { return format_number(std::round(v * 1e4) / 1e4); };

    std::vector<Polyline> walls;
    for (int i = 0; i < opt.walls; ++i) walls.push_back(offset_loop(footprint, -(0.5 * w + i * w)));
    const Polyline infill_boundary = offset_loop(footprint, -opt.walls * w);
    const double spacing = 2.0 * w / opt.infill_density;  // two directions share the density

    std::string out;
    out += ";FLAVOR:Marlin\n;generated fixture\n";
    out += "M140 S" + fmt(opt.bed_temp) + "\nM104 S" + fmt(opt.nozzle_temp) + "\n";
    out += "M190 S" + fmt(opt.bed_temp) + "\nM109 S" + fmt(opt.nozzle_temp) + "\n";
    out += "G21\nG90\nM82\nG28\nG92 E0\n";
    double e = 0.0;
    auto travel = [&](const Point2& p) { out += "G0 F" + fmt(opt.travel_feed) + " X" + fmt(p.x) + " Y" + fmt(p.y) + "\n"; };
    auto extrude = [&](const Point2& from, const Point2& to) {
        e += distance(from, to) * e_per_mm;
        out += "G1 F" + fmt(opt.print_feed) + " X" + fmt(to.x) + " Y" + fmt(to.y) + " E" + format_number(std::round(e * 1e5) / 1e5) + "\n";
    };
    for (int k = 0; k < opt.layers; ++k) {
        const double z = (k + 1) * h;
        out += ";LAYER:" + std::to_string(k) + "\n";
        out += "G0 F" + fmt(opt.travel_feed) + " Z" + fmt(z) + "\n";
        // outer wall first, then inner walls from the outside in
        for (int i = 0; i < opt.walls; ++i) {
            out += i == 0 ? ";TYPE:WALL-OUTER\n" : ";TYPE:WALL-INNER\n";
            const auto& loop = walls[i];
            travel(loop[0]);
            for (std::size_t j = 1; j <= loop.size(); ++j) extrude(loop[j - 1], loop[j % loop.size()]);
        }
        out += ";TYPE:FILL\n";
        const Box2 bb = bounds(infill_boundary);
        const double reach = std::hypot(bb.width(), bb.height());
        for (int d = 0; d < 2; ++d) {
            const double a = deg2rad(opt.infill_angle_deg + 90.0 * d);
            const Point2 dir{std::cos(a), std::sin(a)}, nrm{-dir.y, dir.x};
            const Point2 c = bb.center();
            // lines on a fixed world lattice so every layer repeats the same pattern
            const double first = std::ceil((dot(c, nrm) - reach) / spacing) * spacing;
            bool flip = false;
            for (double off = first; off <= dot(c, nrm) + reach; off += spacing) {
                const Point2 p = nrm * off;
                auto spans = clip_line(p, dir, infill_boundary);
                if (flip) std::reverse(spans.begin(), spans.end());
                for (auto [t0, t1] : spans) {
                    if (flip) std::swap(t0, t1);
                    const Point2 s = p + dir * t0, f = p + dir * t1;
                    travel(s);
                    extrude(s, f);
                }
                if (!spans.empty()) flip = !flip;
            }
        }
    }
    out += "M104 S0\nM140 S0\nM84\n";
    return out;
}

}  // namespace layerscope
