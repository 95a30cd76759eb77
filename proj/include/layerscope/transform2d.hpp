#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "geometry.hpp"

namespace layerscope {

/// Planar correction applied to toolpaths of the next layer:
///
///     p' = c + S (R(theta) (p - c) + t),   S = diag(s_x, s_y)
///
/// where c is the pivot (the layer-outline centroid). With c at the origin this is exactly
/// the scale-after-rigid-motion form used for trajectory updates, translation included in
/// the scaled term.
struct Transform2D {
    double theta = 0.0;  // radians, (-pi, pi]
    double s_x = 1.0;
    double s_y = 1.0;
    double t_x = 0.0;  // mm
    double t_y = 0.0;  // mm

    static Transform2D identity() noexcept { return {}; }

    bool is_identity() const noexcept { return theta == 0.0 && s_x == 1.0 && s_y == 1.0 && t_x == 0.0 && t_y == 0.0; }

    bool is_finite() const noexcept {
        return std::isfinite(theta) && std::isfinite(s_x) && std::isfinite(s_y) && std::isfinite(t_x) &&
               std::isfinite(t_y);
    }

    bool valid() const noexcept { return is_finite() && s_x > 0.0 && s_y > 0.0; }

    double translation_norm() const noexcept { return std::hypot(t_x, t_y); }

    Point2 apply(const Point2& p, const Point2& pivot = {}) const noexcept {
        const double c = std::cos(theta), s = std::sin(theta);
        const double dx = p.x - pivot.x, dy = p.y - pivot.y;
        return {pivot.x + s_x * (c * dx - s * dy + t_x), pivot.y + s_y * (s * dx + c * dy + t_y)};
    }

    /// Linear part only, for relative moves.
    Point2 apply_linear(const Point2& d) const noexcept {
        const double c = std::cos(theta), s = std::sin(theta);
        return {s_x * (c * d.x - s * d.y), s_y * (s * d.x + c * d.y)};
    }

    /// Inverse for pivot-centred application: if L' = transform(L, *this) about the centroid of L,
    /// then transform(L', centered_inverse()) about the centroid of L' restores L.
    /// Only defined for isotropic scale (or zero rotation).
    Transform2D centered_inverse() const {
        if (s_x != s_y && std::sin(theta) != 0.0)
            throw std::domain_error("inverse of rotated anisotropic transform is not of this form");
        if (s_x != s_y) return {0.0, 1.0 / s_x, 1.0 / s_y, -s_x * s_x * t_x, -s_y * s_y * t_y};
        const double s = s_x;
        return {normalize_angle(-theta), 1.0 / s, 1.0 / s, -s * s_x * t_x, -s * s_y * t_y};
    }

    static double normalize_angle(double a) noexcept {
        a = std::remainder(a, 2.0 * std::numbers::pi);
        if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
        return a;
    }
};

}  // namespace layerscope
