#pragma once

#include <cmath>
#include <vector>

#include "image.hpp"

namespace layerscope {

struct CannyOptions {
    double sigma = 1.4;
    double high = 0.2;  // fraction of the maximum gradient magnitude
    double low = 0.08;
};

struct Gradient {
    RealImage gx, gy, magnitude;
};

/// Sobel derivatives of an (already smoothed) image; reflect padding.
inline Gradient sobel(const RealImage& img) {
    const int w = img.width(), h = img.height();
    Gradient g{RealImage(w, h), RealImage(w, h), RealImage(w, h)};
    for (int y = 0; y < h; ++y) {
        const int ym = reflect_index(y - 1, h), yp = reflect_index(y + 1, h);
        for (int x = 0; x < w; ++x) {
            const int xm = reflect_index(x - 1, w), xp = reflect_index(x + 1, w);
            const double gx = (img(xp, ym) + 2 * img(xp, y) + img(xp, yp)) - (img(xm, ym) + 2 * img(xm, y) + img(xm, yp));
            const double gy = (img(xm, yp) + 2 * img(x, yp) + img(xp, yp)) - (img(xm, ym) + 2 * img(x, ym) + img(xp, ym));
            g.gx(x, y) = gx;
            g.gy(x, y) = gy;
            g.magnitude(x, y) = std::hypot(gx, gy);
        }
    }
    return g;
}

/// Keeps weak candidates 8-connected to a strong one.
inline Mask hysteresis(const RealImage& magnitude, const Mask& candidates, double low, double high) {
    const int w = magnitude.width(), h = magnitude.height();
    Mask out(w, h, 0);
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (candidates(x, y) && magnitude(x, y) >= high && !out(x, y)) {
                out(x, y) = 1;
                stack.emplace_back(x, y);
                while (!stack.empty()) {
                    auto [cx, cy] = stack.back();
                    stack.pop_back();
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int nx = cx + dx, ny = cy + dy;
                            if (!out.contains(nx, ny) || out(nx, ny) || !candidates(nx, ny)) continue;
                            if (magnitude(nx, ny) < low) continue;
                            out(nx, ny) = 1;
                            stack.emplace_back(nx, ny);
                        }
                }
            }
    return out;
}

/// Canny edge detector with thresholds relative to the maximum gradient magnitude.
template <typename T>
Mask canny(const Image<T>& img, const CannyOptions& opt = {}) {
    const RealImage smooth = gaussian_blur(to_real(img), opt.sigma);
    const Gradient g = sobel(smooth);
    const int w = img.width(), h = img.height();
    double max_mag = 0.0;
    for (double v : g.magnitude.data()) max_mag = std::max(max_mag, v);
    if (max_mag <= 1e-9) return Mask(w, h, 0);

    Mask nms(w, h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double m = g.magnitude(x, y);
            if (m <= 0) continue;
            // Quantize the gradient direction to 0/45/90/135 degrees.
            double angle = std::atan2(g.gy(x, y), g.gx(x, y)) * 180.0 / 3.14159265358979323846;
            if (angle < 0) angle += 180.0;
            int dx, dy;
            if (angle < 22.5 || angle >= 157.5) dx = 1, dy = 0;
            else if (angle < 67.5) dx = 1, dy = 1;
            else if (angle < 112.5) dx = 0, dy = 1;
            else dx = -1, dy = 1;
            auto at = [&](int xx, int yy) { return g.magnitude.contains(xx, yy) ? g.magnitude(xx, yy) : 0.0; };
            const double a = at(x + dx, y + dy), b = at(x - dx, y - dy);
            // Ties resolved towards one side so plateaus stay one pixel wide.
            if (m > a && m >= b) nms(x, y) = 1;
        }
    return hysteresis(g.magnitude, nms, opt.low * max_mag, opt.high * max_mag);
}

}  // namespace layerscope
