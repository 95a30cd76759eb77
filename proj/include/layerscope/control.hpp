#pragma once

// Layer decision logic: branch verdicts and calibration flags in, failure hypotheses and
// printer actions out, plus their encoding as G-code.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "anomaly.hpp"
#include "errors.hpp"
#include "gcode.hpp"
#include "height.hpp"
#include "registration.hpp"
#include "transform2d.hpp"

namespace layerscope {

struct CalibrationFlags {
    bool bed_level_ok = true;
    bool dimensional_ok = true;
    bool circularity_ok = true;

    bool all_ok() const noexcept { return bed_level_ok && dimensional_ok && circularity_ok; }
};

enum class FailureType {
    OutOfFilament,
    BlockedNozzle,
    MissingLayer,
    LostDimensionalAccuracy,
    BedLevelingIssue,
    AdhesionWarping,
    NotStickingToBed,
    PrintOffsetBending,
    WeakInfill,
    DeformedInfill,
    BurntBlobs,
    IncompleteInfill,
    PoorSurfaceAboveSupports,
    InfillShellGaps,
};

inline constexpr FailureType all_failure_types[] = {
    FailureType::OutOfFilament,      FailureType::BlockedNozzle,    FailureType::MissingLayer,
    FailureType::LostDimensionalAccuracy, FailureType::BedLevelingIssue, FailureType::AdhesionWarping,
    FailureType::NotStickingToBed,   FailureType::PrintOffsetBending, FailureType::WeakInfill,
    FailureType::DeformedInfill,     FailureType::BurntBlobs,       FailureType::IncompleteInfill,
    FailureType::PoorSurfaceAboveSupports, FailureType::InfillShellGaps,
};

/// Row number in the failure/action table, 1-based.
inline int table_row(FailureType f) noexcept { return static_cast<int>(f) + 1; }

inline const char* to_string(FailureType f) noexcept {
    switch (f) {
        case FailureType::OutOfFilament: return "OutOfFilament";
        case FailureType::BlockedNozzle: return "BlockedNozzle";
        case FailureType::MissingLayer: return "MissingLayer";
        case FailureType::LostDimensionalAccuracy: return "LostDimensionalAccuracy";
        case FailureType::BedLevelingIssue: return "BedLevelingIssue";
        case FailureType::AdhesionWarping: return "AdhesionWarping";
        case FailureType::NotStickingToBed: return "NotStickingToBed";
        case FailureType::PrintOffsetBending: return "PrintOffsetBending";
        case FailureType::WeakInfill: return "WeakInfill";
        case FailureType::DeformedInfill: return "DeformedInfill";
        case FailureType::BurntBlobs: return "BurntBlobs";
        case FailureType::IncompleteInfill: return "IncompleteInfill";
        case FailureType::PoorSurfaceAboveSupports: return "PoorSurfaceAboveSupports";
        case FailureType::InfillShellGaps: return "InfillShellGaps";
    }
    return "?";
}

enum class ActionKind { PauseReport, SetNozzleTemp, SetBedTemp, RepeatLayer, UpdateGcode, SetFeedRate, Ironing, PatchReplacement };

inline const char* to_string(ActionKind k) noexcept {
    switch (k) {
        case ActionKind::PauseReport: return "PauseReport";
        case ActionKind::SetNozzleTemp: return "SetNozzleTemp";
        case ActionKind::SetBedTemp: return "SetBedTemp";
        case ActionKind::RepeatLayer: return "RepeatLayer";
        case ActionKind::UpdateGcode: return "UpdateGcode";
        case ActionKind::SetFeedRate: return "SetFeedRate";
        case ActionKind::Ironing: return "Ironing";
        case ActionKind::PatchReplacement: return "PatchReplacement";
    }
    return "?";
}

struct PrinterAction {
    ActionKind kind = ActionKind::PauseReport;
    double delta = 0.0;  // degC for temperatures, percent points for feed rate
    int count = 0;       // RepeatLayer
    Transform2D transform;
    Point2 pivot;
    std::string reason;  // PauseReport
    bool only_if_critical = false;  // a pause the table makes conditional on a critical deviation

    static PrinterAction pause(std::string why, bool conditional = false) {
        PrinterAction a;
        a.reason = std::move(why);
        a.only_if_critical = conditional;
        return a;
    }
    static PrinterAction nozzle(double d) { return {ActionKind::SetNozzleTemp, d}; }
    static PrinterAction bed(double d) { return {ActionKind::SetBedTemp, d}; }
    static PrinterAction feed(double d) { return {ActionKind::SetFeedRate, d}; }
    static PrinterAction repeat(int n) { return {ActionKind::RepeatLayer, 0.0, n}; }
    static PrinterAction update(const Transform2D& t = {}, const Point2& pivot = {}) {
        return {ActionKind::UpdateGcode, 0.0, 0, t, pivot};
    }
    static PrinterAction of(ActionKind k) { return {k}; }
};

struct ControlConfig {
    double nozzle_step = 5.0;  // degC per intervention
    double bed_step = 5.0;
    int max_temp_interventions = 2;
    double feed_step = 10.0;  // percent points
    int max_repeat = 3;
    double max_temp_delta = 15.0;
    double nozzle_min = 160.0, nozzle_max = 230.0;
    double bed_min = 0.0, bed_max = 110.0;

    // region morphology used to tell infill failures apart
    double elongated = 4.0;          // major / minor axis ratio
    int fragmented_regions = 4;      // at least this many small regions
    double fragment_fraction = 0.05;  // each below this fraction of the mask
    double bright_contrast = 25.0;   // gray levels above the normal infill
    double support_overlap = 0.5;    // fraction of anomalous pixels above previous-layer support

    RegistrationRules registration;  // nominal band separating offsets from shape changes
};

/// Table action set for one failure. Temperature and feed directions: "increase" is +, "change"
/// for deformed infill is taken as a decrease, and feed changes for surface defects slow down.
inline std::vector<PrinterAction> action_for(FailureType f, const ControlConfig& cfg = {}) {
    using A = PrinterAction;
    switch (f) {
        case FailureType::OutOfFilament: return {A::pause("out of filament")};
        case FailureType::BlockedNozzle: return {A::nozzle(cfg.nozzle_step), A::repeat(1)};
        case FailureType::MissingLayer: return {A::repeat(1)};
        case FailureType::LostDimensionalAccuracy: return {A::update()};
        case FailureType::BedLevelingIssue: return {A::pause("bed leveling issue: manual level recalibration required")};
        case FailureType::AdhesionWarping: return {A::bed(cfg.bed_step), A::pause("critical vertical deviation of the first layer", true)};
        case FailureType::NotStickingToBed: return {A::bed(cfg.bed_step), A::pause("print is not sticking to the bed")};
        case FailureType::PrintOffsetBending: return {A::update()};
        case FailureType::WeakInfill: return {A::nozzle(cfg.nozzle_step), A::feed(cfg.feed_step)};
        case FailureType::DeformedInfill: return {A::nozzle(-cfg.nozzle_step), A::feed(-cfg.feed_step)};
        case FailureType::BurntBlobs: return {A::of(ActionKind::Ironing)};
        case FailureType::IncompleteInfill: return {A::of(ActionKind::PatchReplacement)};
        case FailureType::PoorSurfaceAboveSupports: return {A::feed(-cfg.feed_step)};
        case FailureType::InfillShellGaps: return {A::feed(-cfg.feed_step)};
    }
    return {A::pause("unknown failure")};
}

/// Texture branch result with the extra evidence region morphology needs.
struct TextureInput {
    const AnomalyReport* report = nullptr;
    double contrast = 0.0;         // mean gray level of anomalous minus normal infill pixels
    double support_overlap = 0.0;  // fraction of anomalous pixels above previous-layer support
};

struct DecisionInput {
    int layer_index = 0;
    CalibrationFlags calibration;
    std::optional<HeightVerdict> height;  // nullopt: branch did not produce a verdict
    HeightStats height_stats;
    double layer_height = 0.0;
    std::optional<RegistrationVerdict> registration;
    Point2 pivot;
    std::optional<TextureInput> texture;  // nullopt: skipped (no infill)
};

/// Interventions so far; advanced after every decided layer.
struct ControlHistory {
    int nozzle_interventions = 0;
    int bed_interventions = 0;
    int consecutive_repeats = 0;  // layers repeated in a row up to the previous layer
    double nozzle_offset = 0.0;   // accumulated degC
    double bed_offset = 0.0;
    double feed_offset = 0.0;     // accumulated percent points
};

struct Decision {
    std::vector<FailureType> failures;
    std::vector<PrinterAction> actions;
    std::string diagnostic;

    bool pauses() const noexcept {
        return std::any_of(actions.begin(), actions.end(), [](const auto& a) { return a.kind == ActionKind::PauseReport; });
    }
};

inline FailureType classify_infill_failure(const TextureInput& t, const ControlConfig& cfg = {}) {
    const auto& regions = t.report->regions;
    if (t.support_overlap >= cfg.support_overlap) return FailureType::PoorSurfaceAboveSupports;
    if (t.contrast >= cfg.bright_contrast) return FailureType::BurntBlobs;
    bool border_strip = false, interior_strip = false;
    int small = 0;
    for (const auto& r : regions) {
        if (r.elongation >= cfg.elongated) (r.touches_border ? border_strip : interior_strip) = true;
        if (r.area_fraction < cfg.fragment_fraction) ++small;
    }
    if (border_strip) return FailureType::InfillShellGaps;
    if (small >= cfg.fragmented_regions && small == static_cast<int>(regions.size())) return FailureType::WeakInfill;
    if (interior_strip) return FailureType::DeformedInfill;
    return FailureType::IncompleteInfill;
}

namespace detail {

inline void add_failure(Decision& d, FailureType f, std::vector<PrinterAction> actions) {
    if (std::find(d.failures.begin(), d.failures.end(), f) != d.failures.end()) return;
    d.failures.push_back(f);
    d.actions.insert(d.actions.end(), actions.begin(), actions.end());
}

inline void append_diag(Decision& d, const std::string& s) {
    if (!d.diagnostic.empty()) d.diagnostic += "; ";
    d.diagnostic += s;
}

}  // namespace detail

/// Evaluates calibration gates, then height, then outline, then texture. Pure given `history`.
inline Decision decide(const DecisionInput& in, const ControlHistory& history, const ControlConfig& cfg = {}) {
    Decision d;
    using A = PrinterAction;

    if (!in.calibration.all_ok()) {
        std::string why = "calibration check failed:";
        if (!in.calibration.bed_level_ok) why += " bed level";
        if (!in.calibration.dimensional_ok) why += " dimensions";
        if (!in.calibration.circularity_ok) why += " circularity";
        d.failures.push_back(in.calibration.bed_level_ok ? FailureType::LostDimensionalAccuracy : FailureType::BedLevelingIssue);
        d.actions.push_back(A::pause(why));
        d.diagnostic = why;
        return d;
    }

    const bool first_layer = in.layer_index == 0;
    const auto reg = in.registration ? in.registration->status : RegistrationStatus::Failure;
    const bool outline_found = in.registration && reg != RegistrationStatus::Failure;
    const bool height_bad = in.height && *in.height == HeightVerdict::Failure;
    const bool critical = height_bad;

    if (!in.height) detail::append_diag(d, "height branch produced no verdict");
    if (!in.registration) detail::append_diag(d, "registration branch produced no verdict");

    if (first_layer) {
        if (in.height && *in.height != HeightVerdict::Ok) {
            FailureType f;
            if (!outline_found) f = FailureType::NotStickingToBed;
            else if (in.height_stats.mean_error > 0.0) f = FailureType::AdhesionWarping;
            else f = FailureType::BedLevelingIssue;
            auto acts = action_for(f, cfg);
            std::erase_if(acts, [&](const A& a) { return a.only_if_critical && !critical; });
            detail::add_failure(d, f, acts);
        }
        if (in.texture && in.texture->report && in.texture->report->defective)
            detail::add_failure(d, FailureType::BedLevelingIssue, action_for(FailureType::BedLevelingIssue, cfg));
    } else {
        if (height_bad) {
            if (in.height_stats.mean_error > 0.0) {
                auto acts = action_for(FailureType::AdhesionWarping, cfg);
                detail::add_failure(d, FailureType::AdhesionWarping, acts);
            } else if (!outline_found) {
                detail::add_failure(d, FailureType::OutOfFilament, action_for(FailureType::OutOfFilament, cfg));
            } else {
                const auto f = history.nozzle_interventions > 0 ? FailureType::MissingLayer : FailureType::BlockedNozzle;
                detail::add_failure(d, f, action_for(f, cfg));
            }
        }
        if (in.registration && reg == RegistrationStatus::Corrected) {
            const auto& t = in.registration->transform;
            const auto& rules = cfg.registration;
            const bool shape = std::abs(rad2deg(t.theta)) > rules.nominal_theta_deg ||
                               std::max(std::abs(t.s_x - 1.0), std::abs(t.s_y - 1.0)) > rules.nominal_scale;
            const auto f = shape ? FailureType::LostDimensionalAccuracy : FailureType::PrintOffsetBending;
            detail::add_failure(d, f, {A::update(t, in.pivot)});
        } else if (in.registration && reg == RegistrationStatus::Failure && !height_bad) {
            detail::add_failure(d, FailureType::PrintOffsetBending,
                                {A::pause("outline deviation beyond the correctable range: " + in.registration->reason)});
        }
        if (in.texture && in.texture->report && in.texture->report->defective) {
            const auto f = classify_infill_failure(*in.texture, cfg);
            detail::add_failure(d, f, action_for(f, cfg));
        }
    }

    // intervention limits
    std::vector<A> kept;
    bool limit_pause = false;
    for (auto& a : d.actions) {
        if (a.kind == ActionKind::SetNozzleTemp && history.nozzle_interventions >= cfg.max_temp_interventions) {
            detail::append_diag(d, "nozzle temperature intervention limit reached");
            continue;
        }
        if (a.kind == ActionKind::SetBedTemp && history.bed_interventions >= cfg.max_temp_interventions) {
            detail::append_diag(d, "bed temperature intervention limit reached");
            continue;
        }
        if (a.kind == ActionKind::RepeatLayer) {
            if (history.consecutive_repeats + a.count > cfg.max_repeat) {
                detail::append_diag(d, "layer repeat limit reached");
                limit_pause = true;
                continue;
            }
        }
        kept.push_back(std::move(a));
    }
    d.actions = std::move(kept);
    if (limit_pause && !d.pauses()) d.actions.push_back(A::pause("layer repeat limit reached"));
    if (!d.failures.empty() && d.actions.empty()) d.actions.push_back(A::pause("intervention limits exhausted"));
    return d;
}

inline ControlHistory advance(ControlHistory h, const Decision& d) {
    bool repeated = false;
    for (const auto& a : d.actions) switch (a.kind) {
            case ActionKind::SetNozzleTemp:
                ++h.nozzle_interventions;
                h.nozzle_offset += a.delta;
                break;
            case ActionKind::SetBedTemp:
                ++h.bed_interventions;
                h.bed_offset += a.delta;
                break;
            case ActionKind::SetFeedRate: h.feed_offset += a.delta; break;
            case ActionKind::RepeatLayer:
                h.consecutive_repeats += a.count;
                repeated = true;
                break;
            default: break;
        }
    // only a clean layer ends a run of repeats
    if (!repeated && d.failures.empty()) h.consecutive_repeats = 0;
    return h;
}

// ---------------------------------------------------------------------------------------------
// Encoding

/// Printer settings the emitted commands are relative to.
struct PrinterState {
    double nozzle_temp = 200.0;
    double bed_temp = 60.0;
    double feed_percent = 100.0;
};

struct Emission {
    std::vector<gcode::Command> commands;
    std::optional<gcode::Layer> next_layer;  // layer k+1 after an UpdateGcode
};

namespace detail {

inline gcode::Command make_command(std::string opcode, std::vector<gcode::Argument> args = {}, std::string text = {},
                                   std::optional<std::string> comment = {}) {
    gcode::Command c;
    c.opcode = std::move(opcode);
    c.arguments = std::move(args);
    c.text = std::move(text);
    c.comment = std::move(comment);
    return c;
}

inline double round_to(double v, double step) { return std::round(v / step) * step; }

/// Motion of `layer` replayed from its start state, leaving the extruder position where it was.
inline std::vector<gcode::Command> replay_layer(const gcode::Layer& layer) {
    std::vector<gcode::Command> out;
    gcode::ModalState st = layer.start_state;
    out.push_back(make_command(st.absolute_xyz ? "G90" : "G91"));
    out.push_back(make_command(st.absolute_e ? "M82" : "M83"));
    if (st.x_known && st.y_known && st.z_known) {
        if (st.absolute_xyz) out.push_back(make_command("G0", {{'X', st.x}, {'Y', st.y}, {'Z', st.z}}));
    }
    if (st.absolute_e) out.push_back(make_command("G92", {{'E', st.e}}));
    std::optional<gcode::PathSegment> seg;
    std::optional<gcode::Category> hint;
    for (const auto& c : layer.commands) {
        const bool motion = c.is_motion();
        if (!(motion || c.opcode == "G92" || c.opcode == "G90" || c.opcode == "G91" || c.opcode == "M82" ||
              c.opcode == "M83"))
            continue;
        gcode::detail::apply_command(c, st, seg, hint);
        gcode::Command copy = c;
        copy.comment.reset();
        copy.raw.reset();
        out.push_back(std::move(copy));
    }
    if (st.absolute_e) out.push_back(make_command("G92", {{'E', st.e}}));
    return out;
}

}  // namespace detail

/// Encodes actions as G-code. `layer` is the layer just analyzed; `next` is the one about to be
/// streamed. `state` is updated to the settings after the emitted commands.
inline Emission emit_commands(const std::vector<PrinterAction>& actions, const gcode::Layer& layer,
                              const gcode::Layer* next, PrinterState& state, const ControlConfig& cfg = {}) {
    using detail::make_command;
    Emission em;
    PrinterState st = state;
    for (const auto& a : actions) {
        switch (a.kind) {
            case ActionKind::SetNozzleTemp:
            case ActionKind::SetBedTemp: {
                if (std::abs(a.delta) > cfg.max_temp_delta)
                    throw SafetyError("temperature change of " + gcode::format_number(a.delta) + " degC exceeds the " +
                                      gcode::format_number(cfg.max_temp_delta) + " degC limit");
                const bool nozzle = a.kind == ActionKind::SetNozzleTemp;
                double& t = nozzle ? st.nozzle_temp : st.bed_temp;
                const double target = t + a.delta;
                const double lo = nozzle ? cfg.nozzle_min : cfg.bed_min, hi = nozzle ? cfg.nozzle_max : cfg.bed_max;
                if (target < lo || target > hi)
                    throw SafetyError(std::string(nozzle ? "nozzle" : "bed") + " temperature " +
                                      gcode::format_number(target) + " degC outside " + gcode::format_number(lo) + ".." +
                                      gcode::format_number(hi));
                t = target;
                em.commands.push_back(make_command(nozzle ? "M104" : "M140", {{'S', target}}));
                break;
            }
            case ActionKind::SetFeedRate: {
                const double target = detail::round_to(st.feed_percent + a.delta, 1e-6);
                if (target <= 0.0) throw SafetyError("feed rate must stay positive");
                st.feed_percent = target;
                em.commands.push_back(make_command("M220", {{'S', target}}));
                break;
            }
            case ActionKind::PauseReport:
                em.commands.push_back(make_command("M0", {}, a.reason.empty() ? "paused" : a.reason));
                break;
            case ActionKind::RepeatLayer:
                for (int i = 0; i < a.count; ++i) {
                    em.commands.push_back(make_command("", {}, {}, "repeat layer " + std::to_string(layer.index)));
                    auto r = detail::replay_layer(layer);
                    em.commands.insert(em.commands.end(), r.begin(), r.end());
                }
                break;
            case ActionKind::UpdateGcode:
                if (next) {
                    em.next_layer = gcode::transform_layer(em.next_layer ? *em.next_layer : *next, a.transform, a.pivot);
                    em.commands.push_back(make_command("", {}, {}, "coordinates updated for layer " + std::to_string(next->index)));
                }
                break;
            case ActionKind::Ironing:
                em.commands.push_back(make_command("", {}, {}, "ironing requested for layer " + std::to_string(layer.index)));
                break;
            case ActionKind::PatchReplacement:
                em.commands.push_back(make_command("", {}, {}, "patch replacement requested for layer " + std::to_string(layer.index)));
                break;
        }
    }
    state = st;
    return em;
}

}  // namespace layerscope
