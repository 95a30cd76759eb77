#pragma once

// One layer through the image pipeline: side view and height, top view and outline, infill texture, decision.

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "anomaly.hpp"
#include "control.hpp"
#include "errors.hpp"
#include "gcode.hpp"
#include "gmm.hpp"
#include "height.hpp"
#include "image.hpp"
#include "projection.hpp"
#include "registration.hpp"
#include "texture.hpp"

namespace layerscope {

struct AnalysisConfig {
    double top_view_px_per_mm = 5.26;
    std::optional<Box2> top_view_area;  // default: printable area of the standard plate
    SideViewOptions side;               // surface_offset < 0 means half the line width
    TopEdgeOptions top_edge;
    HeightRules height;
    RegistrationOptions registration;
    int texture_size = 150;
    int filter_size = 49;
    int clusters = 6;
    GmmOptions gmm;
    double normal_distance = 1.5;  // standardized RMS distance joining a component to the normal texture
    AnomalyOptions anomaly;
    bool refine_boundaries = true;
    RefineOptions refine;
    ControlConfig control;
    CalibrationFlags calibration;
    std::uint64_t seed = 1;

    AnalysisConfig() { side.surface_offset = -1.0; }

    void validate() const {
        if (!(top_view_px_per_mm > 0)) throw ConfigError("top view resolution must be positive");
        if (!(height.failure_layers > 0 && height.warning_layers > 0 && height.consecutive > 0))
            throw ConfigError("height thresholds must be positive");
        const auto& r = registration.rules;
        if (!(r.nominal_theta_deg > 0 && r.nominal_shift_mm > 0 && r.nominal_scale > 0 && r.max_theta_deg > 0 &&
              r.max_shift_mm > 0 && r.max_scale > 0))
            throw ConfigError("registration bands must be positive");
        if (!(registration.icp.mask_width_px > 0)) throw ConfigError("mask width must be positive");
        if (!(anomaly.threshold > 0 && anomaly.threshold < 1)) throw ConfigError("texture threshold must be in (0, 1)");
        if (clusters < 1 || texture_size < 16 || filter_size < 3 || filter_size % 2 == 0)
            throw ConfigError("invalid texture parameters");
    }
};

struct StageTimes {
    double io = 0.0;  // frame acquisition, command streaming and emission, s
    double height = 0.0;
    double registration = 0.0;
    double texture = 0.0;
    double total() const noexcept { return io + height + registration + texture; }
};

struct HeightResult {
    HeightVerdict verdict = HeightVerdict::Ok;
    HeightStats stats;
    int columns = 0;
    int missing_columns = 0;
};

struct TextureResult {
    AnomalyReport report;
    GrayImage image;           // texture_size square crop the report refers to
    PixelBox crop;             // in top view pixels
    double contrast = 0.0;     // mean gray of anomalous pixels minus normal infill
    double support_overlap = 0.0;
    int normal_components = 0;
};

struct LayerAnalysis {
    int layer = 0;
    double z = 0.0;
    std::optional<HeightResult> height;
    std::optional<RegistrationResult> registration;
    std::optional<TextureResult> texture;
    std::vector<std::string> errors;  // branch failures, "branch: message"
    Decision decision;
    StageTimes times;
    PlaneView top_view;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline const Polyline& largest_loop(const std::vector<Polyline>& loops) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < loops.size(); ++i)
        if (std::abs(signed_area(loops[i])) > std::abs(signed_area(loops[best]))) best = i;
    return loops[best];
}

inline const FilterBank& cached_bank(int size) {
    static thread_local std::optional<FilterBank> bank;
    if (!bank || bank->size != size) bank = build_lm_filterbank(size);
    return *bank;
}

}  // namespace detail

/// Infill texture branch on a top view. Empty when the layer has no infill.
inline std::optional<TextureResult> analyze_texture(const PlaneView& top, const gcode::Layer& reference,
                                                    const AnalysisConfig& cfg, std::uint64_t seed) {
    const Mask full = infill_mask(reference, top);
    PixelBox box;
    for (int y = 0; y < full.height(); ++y)
        for (int x = 0; x < full.width(); ++x)
            if (full(x, y)) box.extend(x, y);
    if (box.empty()) return std::nullopt;

    const int n = cfg.texture_size;
    TextureResult t;
    t.crop = box;
    t.image = to_gray(resize_bilinear(crop(top.image, box), n, n));
    const Mask mask = resize_nearest(crop(full, box), n, n);
    if (count_set(mask) < static_cast<std::size_t>(10 * cfg.clusters)) return std::nullopt;

    const auto& bank = detail::cached_bank(cfg.filter_size);
    // pixels outside the infill (walls, skirt, background) take the infill mean so they do not leak into the responses
    RealImage input = to_real(t.image);
    double mean = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask.data()[i]) {
            mean += input.data()[i];
            ++cnt;
        }
    mean /= static_cast<double>(cnt);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (!mask.data()[i]) input.data()[i] = mean;
    const auto raw = filter_responses(input, bank);
    const auto feats = texture_features(raw, bank);
    const auto model = fit_gmm(feats, cfg.clusters, seed, cfg.gmm, &mask);
    const auto labels = segment(feats, model);
    const auto normal = normal_labels(model, labels, mask, cfg.normal_distance);
    t.normal_components = static_cast<int>(normal.size());
    Mask odd = non_normal_pixels(labels, mask, normal);
    if (cfg.refine_boundaries) odd = refine_anomaly_mask(odd, mask, gaussian_channels(raw, bank), cfg.refine);
    t.report = report_anomalies(odd, labels, mask, cfg.anomaly);

    // brightness of the anomalies against the rest of the infill, and overlap with support below
    odd = Mask(n, n, 0);
    for (const auto& r : t.report.regions)
        for (int p : r.pixels) odd.data()[p] = 1;
    double s_odd = 0, s_ok = 0;
    std::size_t c_odd = 0, c_ok = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask.data()[i]) continue;
        if (odd.data()[i]) {
            s_odd += t.image.data()[i];
            ++c_odd;
        } else {
            s_ok += t.image.data()[i];
            ++c_ok;
        }
    }
    if (c_odd && c_ok) t.contrast = s_odd / c_odd - s_ok / c_ok;
    if (c_odd) {
        PlaneView grid = top;
        Mask support(top.image.width(), top.image.height(), 0);
        bool any = false;
        const double w = reference.params.line_width > 0 ? reference.params.line_width : 0.4;
        for (const auto& s : reference.segments)
            if (s.category == gcode::Category::Support && s.extruding()) {
                const Point2 a = grid.world_to_pixel(s.start), b = grid.world_to_pixel(s.end);
                stroke_segment(support, a.x, a.y, b.x, b.y, 0.5 * w * grid.px_per_mm, std::uint8_t{1});
                any = true;
            }
        if (any) {
            const Mask sup = resize_nearest(crop(support, box), n, n);
            std::size_t hit = 0;
            for (std::size_t i = 0; i < odd.size(); ++i) hit += odd.data()[i] && sup.data()[i];
            t.support_overlap = static_cast<double>(hit) / static_cast<double>(c_odd);
        }
    }
    return t;
}

/// Runs the three branches on `frame` for `reference` (the toolpath actually sent for this layer)
/// and decides. `heights` is the height history of earlier analysed layers; the new entry is
/// appended when the height branch produces one.
inline LayerAnalysis analyze_layer(const GrayImage& frame, const gcode::Layer& reference, const CameraIntrinsics& K,
                                   const CameraPose& pose, std::vector<HeightStats>& heights,
                                   const ControlHistory& history, const AnalysisConfig& cfg) {
    LayerAnalysis a;
    a.layer = reference.index;
    a.z = reference.z;
    const double w = reference.params.line_width > 0 ? reference.params.line_width : 0.4;
    const double h = reference.layer_height > 0 ? reference.layer_height : 0.2;

    std::vector<Polyline> loops;
    Point2 pivot;
    try {
        loops = gcode::layer_outline(reference);
        pivot = centroid(loops);
    } catch (const NoOutline& e) {
        a.errors.push_back(std::string("outline: ") + e.what());
        pivot = gcode::layer_pivot(reference);
    }

    // outline first: the side view and the infill mask have to follow the part where it actually is
    auto t0 = std::chrono::steady_clock::now();
    try {
        a.top_view = virtual_top_view(frame, K, pose, reference.z, cfg.top_view_px_per_mm, cfg.top_view_area);
        if (!loops.empty()) {
            RegistrationOptions ro = cfg.registration;
            ro.icp.px_per_mm = cfg.top_view_px_per_mm;
            a.registration = register_layer(a.top_view, loops, w, pivot, ro);
        }
    } catch (const Error& e) {
        a.errors.push_back(std::string("registration: ") + e.what());
    }
    a.times.registration = detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    if (!loops.empty()) try {
            Polyline outline = detail::largest_loop(loops);
            if (a.registration && a.registration->verdict.status != RegistrationStatus::Failure)
                for (auto& p : outline) p = a.registration->icp.transform.apply(p, pivot);
            SideViewOptions so = cfg.side;
            if (so.surface_offset < 0) so.surface_offset = 0.5 * w;
            const int k = std::max(0, static_cast<int>(std::lround(reference.z / h)) - 1);
            const auto side = pseudo_side_view(frame, K, pose, outline, h, k, so);
            const auto prof = extract_top_edge(side, reference.z, h, cfg.top_edge);
            HeightResult hr;
            hr.stats = height_stats(prof);
            hr.columns = static_cast<int>(prof.per_column_height.size());
            hr.missing_columns = prof.missing_columns;
            heights.push_back(hr.stats);
            hr.verdict = height_verdict(heights, h, cfg.height);
            a.height = hr;
        } catch (const Error& e) {
            a.errors.push_back(std::string("height: ") + e.what());
        }
    a.times.height = detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    if (a.top_view.image.width()) try {
            const bool placed = a.registration && a.registration->verdict.status != RegistrationStatus::Failure &&
                                !a.registration->icp.transform.is_identity();
            a.texture = analyze_texture(a.top_view, placed ? gcode::transform_layer(reference, a.registration->icp.transform, pivot) : reference, cfg, cfg.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(a.layer + 1)));
        } catch (const Error& e) {
            a.errors.push_back(std::string("texture: ") + e.what());
        }
    a.times.texture = detail::seconds_since(t0);

    DecisionInput in;
    in.layer_index = a.layer;
    in.calibration = cfg.calibration;
    in.layer_height = h;
    in.pivot = pivot;
    if (a.height) {
        in.height = a.height->verdict;
        in.height_stats = a.height->stats;
    }
    if (a.registration) in.registration = a.registration->verdict;
    if (a.texture) in.texture = TextureInput{&a.texture->report, a.texture->contrast, a.texture->support_overlap};
    a.decision = decide(in, history, cfg.control);
    if (!a.errors.empty() && !a.decision.pauses()) {
        // a branch that could not run leaves the layer unverified
        std::string why = "analysis incomplete: " + a.errors.front();
        a.decision.actions.push_back(PrinterAction::pause(why));
        if (!a.decision.diagnostic.empty()) a.decision.diagnostic += "; ";
        a.decision.diagnostic += why;
    }
    return a;
}

/// Percent of the print time added by analysing `layers` layers at `seconds_per_layer` each.
inline double overhead_percent(double seconds_per_layer, int layers, double print_seconds) {
    if (!(print_seconds > 0)) throw ConfigError("print time must be positive");
    return 100.0 * seconds_per_layer * layers / print_seconds;
}

}  // namespace layerscope
