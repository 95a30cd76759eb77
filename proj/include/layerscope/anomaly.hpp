#pragma once

// Infill region mask, anomalous-region extraction and grouping of defective sections.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "gcode.hpp"
#include "gmm.hpp"
#include "image.hpp"
#include "projection.hpp"
#include "texture.hpp"

namespace layerscope {

/// Median distance between neighbouring parallel infill lines, in mm. Zero without infill.
inline double infill_line_spacing(const gcode::Layer& layer) {
    std::vector<const gcode::PathSegment*> infill;
    for (const auto& s : layer.segments)
        if (s.category == gcode::Category::Infill && s.extruding() && s.length() > 1e-9) infill.push_back(&s);
    const double w = layer.params.line_width > 0 ? layer.params.line_width : 0.4;
    std::vector<double> gaps;
    for (const auto* a : infill) {
        const Point2 da = (a->end - a->start) / a->length();
        const Point2 mid = (a->start + a->end) * 0.5;
        double best = std::numeric_limits<double>::infinity();
        for (const auto* b : infill) {
            if (a == b) continue;
            const Point2 db = (b->end - b->start) / b->length();
            if (std::abs(cross(da, db)) > std::sin(deg2rad(5.0))) continue;
            // perpendicular offset between the two carrier lines, only where they overlap along the line
            const double t0 = dot(b->start - a->start, da), t1 = dot(b->end - a->start, da);
            if (std::max(t0, t1) < 0.0 || std::min(t0, t1) > a->length()) continue;
            const double off = std::abs(cross(da, b->start - mid));
            if (off > 0.5 * w) best = std::min(best, off);
        }
        if (std::isfinite(best)) gaps.push_back(best);
    }
    if (gaps.empty()) return 0.0;
    std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2), gaps.end());
    return gaps[gaps.size() / 2];
}

struct InfillMaskOptions {
    double line_width = -1.0;    // mm; negative = layer parameter
    double close_radius = -1.0;  // mm; negative = measured line spacing
    double wall_margin = -1.0;   // mm kept clear of wall strokes; negative = half a line width
};

/// Infill region of `layer` rasterized in the pixel grid of `view`. Empty when the layer has no infill.
inline Mask infill_mask(const gcode::Layer& layer, const PlaneView& view, const InfillMaskOptions& opt = {}) {
    Mask mask(view.image.width(), view.image.height(), 0);
    const double w = opt.line_width > 0 ? opt.line_width : (layer.params.line_width > 0 ? layer.params.line_width : 0.4);
    bool any = false;
    for (const auto& s : layer.segments) {
        if (s.category != gcode::Category::Infill || !s.extruding()) continue;
        const Point2 a = view.world_to_pixel(s.start), b = view.world_to_pixel(s.end);
        stroke_segment(mask, a.x, a.y, b.x, b.y, 0.5 * w * view.px_per_mm, std::uint8_t{1});
        any = true;
    }
    if (!any) return mask;
    const double spacing = opt.close_radius > 0 ? opt.close_radius : infill_line_spacing(layer);
    if (spacing > 0) mask = morph_close(mask, spacing * view.px_per_mm);

    Mask walls(mask.width(), mask.height(), 0);
    const double margin = opt.wall_margin >= 0 ? opt.wall_margin : 0.5 * w;
    for (const auto& s : layer.segments) {
        if ((s.category != gcode::Category::OuterWall && s.category != gcode::Category::InnerWall) || !s.extruding()) continue;
        const Point2 a = view.world_to_pixel(s.start), b = view.world_to_pixel(s.end);
        stroke_segment(walls, a.x, a.y, b.x, b.y, (0.5 * w + margin) * view.px_per_mm, std::uint8_t{1});
    }
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (walls.data()[i]) mask.data()[i] = 0;
    return mask;
}

/// Most frequent label inside the mask; ties go to the lower label. -1 for an empty mask.
inline int dominant_label(const LabelImage& labels, const Mask& mask) {
    std::vector<std::size_t> count;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!mask.data()[i]) continue;
        const int l = labels.data()[i];
        if (l < 0) continue;
        if (static_cast<std::size_t>(l) >= count.size()) count.resize(l + 1, 0);
        ++count[l];
    }
    if (count.empty()) return -1;
    return static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
}

/// Labels that describe the normal texture: the dominant label, plus every component whose
/// mean lies within `max_distance` (per-dimension standardized RMS) of a label already
/// accepted. A regular pattern is often split by phase into several close components.
inline std::vector<int> normal_labels(const GmmModel& model, const LabelImage& labels, const Mask& mask,
                                      double max_distance) {
    const int dom = dominant_label(labels, mask);
    if (dom < 0) return {};
    std::vector<int> accepted{dom};
    std::vector<bool> in(model.k, false);
    in[dom] = true;
    for (std::size_t head = 0; head < accepted.size(); ++head) {
        const int a = accepted[head];
        for (int j = 0; j < model.k; ++j) {
            if (in[j]) continue;
            double s = 0.0;
            for (int d = 0; d < model.dim; ++d) {
                const double diff = model.mean(a)[d] - model.mean(j)[d];
                s += diff * diff / (model.variance(a)[d] + model.variance(j)[d]);
            }
            if (std::sqrt(s / model.dim) < max_distance) {
                in[j] = true;
                accepted.push_back(j);
            }
        }
    }
    std::sort(accepted.begin(), accepted.end());
    return accepted;
}

struct AnomalyRegion {
    std::vector<int> pixels;  // y * width + x
    double area_fraction = 0.0;  // of the mask area
    Point2 centroid;             // pixels
    PixelBox box;
    double elongation = 1.0;  // major / minor axis
    bool touches_border = false;
};

struct DefectGroup {
    std::vector<int> regions;
    Point2 centroid;
    PixelBox box;
    double area_fraction = 0.0;
};

struct AnomalyReport {
    LabelImage label_image;
    Mask infill_mask;
    std::vector<AnomalyRegion> regions;
    std::vector<DefectGroup> groups;
    double anomaly_fraction = 0.0;
    bool defective = false;
};

struct AnomalyOptions {
    double threshold = 0.15;
    int min_region_px = 25;
    double border_elongation = 10.0;
    double ahc_merge_fraction = 0.2;  // of the mask bounding-box diagonal
};

struct AhcOptions {
    double merge_distance = 0.0;  // pixels; two groups closer than this become one
};

/// Centroid-linkage agglomeration of region centroids down to at most two groups.
inline std::vector<DefectGroup> cluster_anomalies_ahc(const std::vector<AnomalyRegion>& regions, const AhcOptions& opt = {}) {
    std::vector<DefectGroup> groups;
    std::vector<double> mass;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const auto& r = regions[i];
        groups.push_back({{static_cast<int>(i)}, r.centroid, r.box, r.area_fraction});
        mass.push_back(static_cast<double>(r.pixels.size()));
    }
    auto merge = [&](std::size_t a, std::size_t b) {
        auto& ga = groups[a];
        const auto& gb = groups[b];
        const double m = mass[a] + mass[b];
        ga.centroid = m > 0 ? (ga.centroid * mass[a] + gb.centroid * mass[b]) / m : (ga.centroid + gb.centroid) * 0.5;
        ga.regions.insert(ga.regions.end(), gb.regions.begin(), gb.regions.end());
        std::sort(ga.regions.begin(), ga.regions.end());
        ga.box.extend(gb.box.x0, gb.box.y0);
        ga.box.extend(gb.box.x1, gb.box.y1);
        ga.area_fraction += gb.area_fraction;
        mass[a] = m;
        groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(b));
        mass.erase(mass.begin() + static_cast<std::ptrdiff_t>(b));
    };
    auto closest = [&] {
        std::pair<std::size_t, std::size_t> best{0, 1};
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < groups.size(); ++a)
            for (std::size_t b = a + 1; b < groups.size(); ++b) {
                const double d = distance(groups[a].centroid, groups[b].centroid);
                if (d < bd) {
                    bd = d;
                    best = {a, b};
                }
            }
        return std::pair{best, bd};
    };
    while (groups.size() > 2) {
        const auto [ab, d] = closest();
        merge(ab.first, ab.second);
    }
    if (groups.size() == 2) {
        const auto [ab, d] = closest();
        if (d < opt.merge_distance) merge(ab.first, ab.second);
    }
    return groups;
}

/// Pixels inside the mask whose label is not one of `normal` (default: the dominant label).
inline Mask non_normal_pixels(const LabelImage& labels, const Mask& mask, std::vector<int> normal = {}) {
    if (labels.width() != mask.width() || labels.height() != mask.height())
        throw SizeError("label image and mask sizes differ");
    if (normal.empty()) normal.push_back(dominant_label(labels, mask));
    const std::set<int> normal_set(normal.begin(), normal.end());
    Mask odd(labels.width(), labels.height(), 0);
    for (std::size_t i = 0; i < odd.size(); ++i)
        if (mask.data()[i] && !normal_set.count(labels.data()[i])) odd.data()[i] = 1;
    return odd;
}

/// Regions, fraction and groups from a binary anomaly mask. `labels` is kept for display only.
inline AnomalyReport report_anomalies(const Mask& anomalous, const LabelImage& labels, const Mask& mask,
                                      const AnomalyOptions& opt = {}) {
    if (anomalous.width() != mask.width() || anomalous.height() != mask.height())
        throw SizeError("anomaly mask and infill mask sizes differ");
    AnomalyReport rep;
    rep.label_image = labels;
    rep.infill_mask = mask;
    const std::size_t mask_area = count_set(mask);
    if (mask_area == 0) return rep;

    const int w = mask.width(), h = mask.height();
    Mask odd(w, h, 0);
    PixelBox mask_box;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask(x, y)) continue;
            mask_box.extend(x, y);
            odd(x, y) = anomalous(x, y) ? 1 : 0;
        }
    const auto cc = connected_components(odd, 8);
    std::vector<AnomalyRegion> regions(cc.count);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int l = cc.labels(x, y);
            if (!l) continue;
            auto& r = regions[l - 1];
            r.pixels.push_back(y * w + x);
            r.box.extend(x, y);
            for (int dy = -1; dy <= 1 && !r.touches_border; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    if (!mask.contains(x + dx, y + dy) || !mask(x + dx, y + dy)) {
                        r.touches_border = true;
                        break;
                    }
        }
    for (auto& r : regions) {
        if (static_cast<int>(r.pixels.size()) < opt.min_region_px) continue;
        double sx = 0, sy = 0;
        for (int p : r.pixels) {
            sx += p % w;
            sy += p / w;
        }
        const double n = static_cast<double>(r.pixels.size());
        r.centroid = {sx / n, sy / n};
        double cxx = 0, cyy = 0, cxy = 0;
        for (int p : r.pixels) {
            const double dx = p % w - r.centroid.x, dy = p / w - r.centroid.y;
            cxx += dx * dx;
            cyy += dy * dy;
            cxy += dx * dy;
        }
        // add the variance of a unit pixel so single-pixel-wide strips stay finite
        cxx = cxx / n + 1.0 / 12.0;
        cyy = cyy / n + 1.0 / 12.0;
        cxy /= n;
        const double tr = cxx + cyy, disc = std::sqrt(std::max(0.0, 0.25 * (cxx - cyy) * (cxx - cyy) + cxy * cxy));
        const double l1 = 0.5 * tr + disc, l2 = 0.5 * tr - disc;
        r.elongation = std::sqrt(l1 / std::max(l2, 1e-12));
        if (r.touches_border && r.elongation > opt.border_elongation) continue;
        r.area_fraction = n / static_cast<double>(mask_area);
        rep.anomaly_fraction += r.area_fraction;
        rep.regions.push_back(std::move(r));
    }
    rep.defective = rep.anomaly_fraction > opt.threshold;
    if (rep.defective) {
        const double diag = std::hypot(mask_box.width(), mask_box.height());
        rep.groups = cluster_anomalies_ahc(rep.regions, {opt.ahc_merge_fraction * diag});
    }
    return rep;
}

/// Regions of non-normal labels inside the mask. `normal` defaults to the dominant label.
inline AnomalyReport detect_anomalies(const LabelImage& labels, const Mask& mask, const AnomalyOptions& opt = {},
                                      std::vector<int> normal = {}) {
    return report_anomalies(non_normal_pixels(labels, mask, std::move(normal)), labels, mask, opt);
}

struct RefineOptions {
    double band_px = 10.0;        // reassigned pixels lie within this distance of a region boundary
    double core_erode_px = 4.0;   // region core used for the anomaly mean
    double min_separation = 1.0;  // standardized distance between the two means below which a region is kept as is
    int min_region_px = 25;
};

/// Moves the boundary of each anomalous region to where the per-pixel `fine` features switch
/// between the region's core and the normal texture around it. Regions whose core cannot be told
/// apart from their surroundings are left unchanged.
inline Mask refine_anomaly_mask(const Mask& anomalous, const Mask& mask, const ResponseField& fine,
                                const RefineOptions& opt = {}) {
    const int w = mask.width(), h = mask.height();
    if (anomalous.width() != w || anomalous.height() != h || fine.width != w || fine.height != h)
        throw SizeError("refinement inputs differ in size");
    const int C = fine.channels;
    Mask out(w, h, 0);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = mask.data()[i] && anomalous.data()[i];
    const Mask all_odd = out;
    const auto cc = connected_components(all_odd, 8);
    if (cc.count == 0 || C == 0) return out;

    std::vector<double> var(C, 0.0), mean(C, 0.0);
    std::size_t nm = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask.data()[i]) continue;
        ++nm;
        const double* f = fine.data.data() + i * C;
        for (int c = 0; c < C; ++c) mean[c] += f[c];
    }
    for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(nm);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask.data()[i]) continue;
        const double* f = fine.data.data() + i * C;
        for (int c = 0; c < C; ++c) var[c] += (f[c] - mean[c]) * (f[c] - mean[c]);
    }
    for (int c = 0; c < C; ++c) var[c] = std::max(var[c] / static_cast<double>(nm), 1e-12);

    for (int l = 1; l <= cc.count; ++l) {
        Mask region(w, h, 0);
        std::size_t area = 0;
        for (std::size_t i = 0; i < region.size(); ++i)
            if (cc.labels.data()[i] == l) {
                region.data()[i] = 1;
                ++area;
            }
        if (static_cast<int>(area) < opt.min_region_px) continue;
        Mask core = erode(region, opt.core_erode_px);
        if (count_set(core) < 10) core = region;
        const Mask near = dilate(region, opt.band_px);
        const Mask inner = erode(region, opt.band_px);
        const Mask ring_out = dilate(region, 2.0 * opt.band_px);

        std::vector<double> mc(C, 0.0), mn(C, 0.0);
        std::size_t cc_n = 0, cn_n = 0;
        for (std::size_t i = 0; i < region.size(); ++i) {
            if (!mask.data()[i]) continue;
            const double* f = fine.data.data() + i * C;
            if (core.data()[i]) {
                for (int c = 0; c < C; ++c) mc[c] += f[c];
                ++cc_n;
            } else if (!all_odd.data()[i] && ring_out.data()[i] && !near.data()[i]) {
                for (int c = 0; c < C; ++c) mn[c] += f[c];
                ++cn_n;
            }
        }
        if (cc_n == 0 || cn_n < 10) continue;
        double sep = 0.0;
        for (int c = 0; c < C; ++c) {
            mc[c] /= static_cast<double>(cc_n);
            mn[c] /= static_cast<double>(cn_n);
            sep += (mc[c] - mn[c]) * (mc[c] - mn[c]) / var[c];
        }
        if (std::sqrt(sep / C) < opt.min_separation) continue;

        for (std::size_t i = 0; i < region.size(); ++i) {
            if (!mask.data()[i] || !near.data()[i] || inner.data()[i]) continue;
            if (all_odd.data()[i] && !region.data()[i]) continue;  // another region's pixel
            const double* f = fine.data.data() + i * C;
            double dc = 0.0, dn = 0.0;
            for (int c = 0; c < C; ++c) {
                dc += (f[c] - mc[c]) * (f[c] - mc[c]) / var[c];
                dn += (f[c] - mn[c]) * (f[c] - mn[c]) / var[c];
            }
            out.data()[i] = dc < dn ? 1 : 0;
        }
    }
    return out;
}

}  // namespace layerscope
