#pragma once

// Vertical level validation from the unwrapped side band.

#include <algorithm>
#include <cmath>
#include <vector>

#include "edges.hpp"
#include "errors.hpp"
#include "projection.hpp"

namespace layerscope {

struct HeightProfile {
    std::vector<double> per_column_height;  // mm
    double reference_height = 0.0;          // mm, nominal top of the current layer
    double layer_height = 0.0;              // mm
    int missing_columns = 0;                // columns without an edge, filled from neighbours
};

struct HeightStats {
    double mean_error = 0.0;     // mean signed (detected - reference), mm
    double total_error = 0.0;    // mean |detected - reference|, mm
    double max_abs_error = 0.0;  // mm
};

enum class HeightVerdict { Ok, Warning, Failure };

inline const char* to_string(HeightVerdict v) noexcept {
    switch (v) {
        case HeightVerdict::Ok: return "Ok";
        case HeightVerdict::Warning: return "Warning";
        case HeightVerdict::Failure: return "Failure";
    }
    return "?";
}

struct TopEdgeOptions {
    double sigma = 1.4;
    double high = 0.2;
    double low = 0.08;
    double max_missing_fraction = 0.5;
};

/// Topmost vertical-gradient edge in each column of a side band (row r is z = r / px_per_mm).
inline HeightProfile extract_top_edge(const PlaneView& side, double reference_height, double layer_height,
                                      const TopEdgeOptions& opt = {}) {
    const int w = side.image.width(), h = side.image.height();
    if (w == 0 || h < 3) throw EdgeNotFound("side view is empty");
    const RealImage img = to_real(side.image);

    // Smooth along z only, clamping at the ends: the band is a few rows tall and a mirrored
    // step at its top would shift the edge; smoothing across columns would erase narrow notches.
    const auto k = gaussian_kernel_1d(opt.sigma);
    const int r = static_cast<int>(k.size()) / 2;
    RealImage smooth(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * img(x, std::clamp(y + i, 0, h - 1));
            smooth(x, y) = acc;
        }

    RealImage grad(w, h, 0.0);
    double max_g = 0.0;
    for (int y = 1; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) {
            grad(x, y) = std::abs(smooth(x, y + 1) - smooth(x, y - 1)) * 0.5;
            max_g = std::max(max_g, grad(x, y));
        }
    HeightProfile prof;
    prof.reference_height = reference_height;
    prof.layer_height = layer_height;
    prof.per_column_height.assign(w, 0.0);
    if (max_g <= 1e-9) throw EdgeNotFound("side view has no vertical gradient");

    Mask peaks(w, h, 0);
    for (int y = 1; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double g = grad(x, y);
            if (g > grad(x, y - 1) && g >= grad(x, y + 1)) peaks(x, y) = 1;
        }
    const Mask edges = hysteresis(grad, peaks, opt.low * max_g, opt.high * max_g);

    std::vector<char> found(w, 0);
    for (int x = 0; x < w; ++x)
        for (int y = h - 2; y >= 1; --y) {
            if (!edges(x, y)) continue;
            const double gm = grad(x, y - 1), g0 = grad(x, y), gp = grad(x, y + 1);
            const double denom = gm - 2 * g0 + gp;
            const double delta = std::abs(denom) > 1e-12 ? std::clamp(0.5 * (gm - gp) / denom, -0.5, 0.5) : 0.0;
            prof.per_column_height[x] = (y + delta) / side.px_per_mm;
            found[x] = 1;
            break;
        }
    const int missing = static_cast<int>(std::count(found.begin(), found.end(), 0));
    if (missing > opt.max_missing_fraction * w) throw EdgeNotFound("no edge in " + std::to_string(missing) + " of " + std::to_string(w) + " columns");
    prof.missing_columns = missing;
    if (missing) {
        // Fill gaps from the nearest detected column.
        std::vector<int> nearest(w, -1);
        int last = -1;
        for (int x = 0; x < w; ++x) {
            if (found[x]) last = x;
            nearest[x] = last;
        }
        last = -1;
        for (int x = w - 1; x >= 0; --x) {
            if (found[x]) last = x;
            if (!found[x] && last >= 0 && (nearest[x] < 0 || last - x < x - nearest[x])) nearest[x] = last;
        }
        for (int x = 0; x < w; ++x)
            if (!found[x]) prof.per_column_height[x] = prof.per_column_height[nearest[x]];
    }
    return prof;
}

inline HeightStats height_stats(const HeightProfile& p) {
    HeightStats s;
    if (p.per_column_height.empty()) return s;
    for (double h : p.per_column_height) {
        const double e = h - p.reference_height;
        s.mean_error += e;
        s.total_error += std::abs(e);
        s.max_abs_error = std::max(s.max_abs_error, std::abs(e));
    }
    const double n = static_cast<double>(p.per_column_height.size());
    s.mean_error /= n;
    s.total_error /= n;
    return s;
}

struct HeightRules {
    double failure_layers = 2.0;  // immediate failure beyond this many layer heights
    double warning_layers = 1.0;
    int consecutive = 2;          // consecutive warnings that make a failure
};

inline HeightVerdict height_verdict(const std::vector<HeightStats>& history, double layer_height,
                                    const HeightRules& rules = {}) {
    if (history.empty()) return HeightVerdict::Ok;
    const auto& last = history.back();
    const double fail = rules.failure_layers * layer_height, warn = rules.warning_layers * layer_height;
    if (std::abs(last.mean_error) > fail || last.total_error > fail) return HeightVerdict::Failure;
    if (last.total_error <= warn) return HeightVerdict::Ok;
    int run = 0;
    for (auto it = history.rbegin(); it != history.rend() && it->total_error > warn; ++it) ++run;
    return run >= rules.consecutive ? HeightVerdict::Failure : HeightVerdict::Warning;
}

}  // namespace layerscope
