#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace layerscope {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    Point2& operator+=(const Point2& o) noexcept { x += o.x; y += o.y; return *this; }
    Point2& operator-=(const Point2& o) noexcept { x -= o.x; y -= o.y; return *this; }
    Point2& operator*=(double s) noexcept { x *= s; y *= s; return *this; }
    friend Point2 operator+(Point2 a, const Point2& b) noexcept { return a += b; }
    friend Point2 operator-(Point2 a, const Point2& b) noexcept { return a -= b; }
    friend Point2 operator*(Point2 a, double s) noexcept { return a *= s; }
    friend Point2 operator*(double s, Point2 a) noexcept { return a *= s; }
    friend Point2 operator/(Point2 a, double s) noexcept { return a *= (1.0 / s); }
    bool operator==(const Point2&) const = default;
};

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

inline double dot(const Point2& a, const Point2& b) noexcept { return a.x * b.x + a.y * b.y; }
inline double cross(const Point2& a, const Point2& b) noexcept { return a.x * b.y - a.y * b.x; }
inline double norm(const Point2& a) noexcept { return std::hypot(a.x, a.y); }
inline double distance(const Point2& a, const Point2& b) noexcept { return norm(a - b); }
inline bool is_finite(const Point2& p) noexcept { return std::isfinite(p.x) && std::isfinite(p.y); }

inline constexpr double deg2rad(double d) noexcept { return d * std::numbers::pi / 180.0; }
inline constexpr double rad2deg(double r) noexcept { return r * 180.0 / std::numbers::pi; }

/// Ordered vertices; a closed loop does not repeat its first vertex.
using Polyline = std::vector<Point2>;

struct Box2 {
    Point2 min{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    Point2 max{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};

    bool empty() const noexcept { return !(max.x >= min.x && max.y >= min.y); }
    void extend(const Point2& p) noexcept {
        min.x = std::min(min.x, p.x);
        min.y = std::min(min.y, p.y);
        max.x = std::max(max.x, p.x);
        max.y = std::max(max.y, p.y);
    }
    double width() const noexcept { return max.x - min.x; }
    double height() const noexcept { return max.y - min.y; }
    Point2 center() const noexcept { return (min + max) * 0.5; }
    bool contains(const Point2& p) const noexcept { return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y; }
};

inline Box2 bounds(const Polyline& pts) {
    Box2 b;
    for (const auto& p : pts) b.extend(p);
    return b;
}

inline Box2 bounds(const std::vector<Polyline>& loops) {
    Box2 b;
    for (const auto& l : loops)
        for (const auto& p : l) b.extend(p);
    return b;
}

/// Signed shoelace area (counter-clockwise positive).
inline double signed_area(const Polyline& loop) noexcept {
    double a = 0.0;
    const std::size_t n = loop.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) a += cross(loop[j], loop[i]);
    return 0.5 * a;
}

inline double perimeter(const Polyline& loop) noexcept {
    double len = 0.0;
    const std::size_t n = loop.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) len += distance(loop[j], loop[i]);
    return len;
}

inline double path_length(const Polyline& path) noexcept {
    double len = 0.0;
    for (std::size_t i = 1; i < path.size(); ++i) len += distance(path[i - 1], path[i]);
    return len;
}

/// Area-weighted centroid of a set of loops (each treated as a filled region). Falls back to
/// the vertex mean when the total area vanishes.
inline Point2 centroid(const std::vector<Polyline>& loops) {
    double area = 0.0;
    Point2 acc;
    Point2 mean;
    std::size_t count = 0;
    for (const auto& loop : loops) {
        const double sign = signed_area(loop) < 0 ? -1.0 : 1.0;
        const std::size_t n = loop.size();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const double c = cross(loop[j], loop[i]) * sign;
            area += c;
            acc.x += (loop[j].x + loop[i].x) * c;
            acc.y += (loop[j].y + loop[i].y) * c;
        }
        for (const auto& p : loop) {
            mean += p;
            ++count;
        }
    }
    if (std::abs(area) > 1e-12) return acc / (3.0 * area);
    return count ? mean / static_cast<double>(count) : Point2{};
}

inline Point2 centroid(const Polyline& loop) { return centroid(std::vector<Polyline>{loop}); }

/// Even-odd point-in-polygon.
inline bool point_in_polygon(const Point2& p, const Polyline& poly) noexcept {
    bool inside = false;
    const std::size_t n = poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point2& a = poly[i];
        const Point2& b = poly[j];
        if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) inside = !inside;
    }
    return inside;
}

inline double point_segment_distance(const Point2& p, const Point2& a, const Point2& b) noexcept {
    const Point2 v = b - a;
    const double len2 = dot(v, v);
    double t = len2 > 0 ? dot(p - a, v) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return distance(p, a + v * t);
}

inline double distance_to_loop(const Point2& p, const Polyline& loop) noexcept {
    double best = std::numeric_limits<double>::infinity();
    const std::size_t n = loop.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) best = std::min(best, point_segment_distance(p, loop[j], loop[i]));
    return best;
}

/// Points every `step` of arc length around a closed loop, starting at vertex 0.
inline Polyline resample_loop(const Polyline& loop, double step) {
    Polyline out;
    if (loop.empty() || step <= 0) return out;
    const std::size_t n = loop.size();
    double carry = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Point2 a = loop[i];
        const Point2 b = loop[(i + 1) % n];
        const double len = distance(a, b);
        double s = carry;
        while (s < len) {
            out.push_back(a + (b - a) * (s / len));
            s += step;
        }
        carry = s - len;
    }
    return out;
}

/// Points every `step` along an open path including both ends.
inline Polyline resample_path(const Polyline& path, double step) {
    Polyline out;
    if (path.empty()) return out;
    out.push_back(path.front());
    double carry = step;
    for (std::size_t i = 1; i < path.size(); ++i) {
        const Point2 a = path[i - 1], b = path[i];
        const double len = distance(a, b);
        double s = carry;
        while (s < len) {
            out.push_back(a + (b - a) * (s / len));
            s += step;
        }
        carry = s - len;
    }
    if (distance(out.back(), path.back()) > 1e-9) out.push_back(path.back());
    return out;
}

/// Offsets a closed loop outward (positive distance) along mitred vertex normals.
/// Exact for convex loops; adequate for mildly concave outlines.
inline Polyline offset_loop(const Polyline& loop, double d) {
    const std::size_t n = loop.size();
    if (n < 3 || d == 0.0) return loop;
    const double orient = signed_area(loop) >= 0 ? 1.0 : -1.0;
    Polyline out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Point2& prev = loop[(i + n - 1) % n];
        const Point2& cur = loop[i];
        const Point2& next = loop[(i + 1) % n];
        Point2 e0 = cur - prev, e1 = next - cur;
        e0 = e0 / std::max(norm(e0), 1e-15);
        e1 = e1 / std::max(norm(e1), 1e-15);
        // Outward normal of a CCW loop is the edge direction rotated clockwise.
        const Point2 n0{e0.y * orient, -e0.x * orient};
        const Point2 n1{e1.y * orient, -e1.x * orient};
        Point2 bis = n0 + n1;
        const double bl = norm(bis);
        if (bl < 1e-9) {
            out[i] = cur + n0 * d;
            continue;
        }
        bis = bis / bl;
        const double cos_half = std::max(dot(bis, n0), 0.2);
        out[i] = cur + bis * (d / cos_half);
    }
    return out;
}

}  // namespace layerscope
