#pragma once

// End-to-end runs: stream a program to the printer layer by layer, photograph, analyse, act,
// and write report.jsonl, timings.csv, summary.json and failure crops.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "analysis.hpp"
#include "control.hpp"
#include "errors.hpp"
#include "gcode.hpp"
#include "png.hpp"
#include "projection.hpp"
#include "session.hpp"
#include "synth.hpp"

namespace layerscope {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------------------------
// Camera configuration

struct CameraConfig {
    CameraIntrinsics K;
    CameraPose pose;
    double px_per_mm = 5.26;
};

/// key = value lines; '#' starts a comment; list values are separated by spaces or commas.
/// Keys: f_x f_y c_x c_y width height k1 k2 px_per_mm, and either R (9, row-major) with t (3)
/// or markers (14: pixel x y of the seven plate markers, nan for an undetected one).
inline CameraConfig parse_camera_config(std::string_view text) {
    std::map<std::string, std::vector<double>> kv;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string line(text.substr(0, nl));
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        const std::string key(gcode::detail::trim(std::string_view(line).substr(0, eq)));
        if (key.empty() && eq == std::string::npos) continue;
        if (eq == std::string::npos || key.empty()) throw ConfigError("camera config line " + std::to_string(line_no) + ": expected key = value");
        std::string value = line.substr(eq + 1);
        std::replace(value.begin(), value.end(), ',', ' ');
        std::istringstream in(value);
        std::vector<double> nums;
        std::string tok;
        while (in >> tok) {
            char* end = nullptr;
            const double v = std::strtod(tok.c_str(), &end);
            if (end != tok.c_str() + tok.size()) throw ConfigError("camera config line " + std::to_string(line_no) + ": bad number \"" + tok + "\"");
            nums.push_back(v);
        }
        if (nums.empty()) throw ConfigError("camera config line " + std::to_string(line_no) + ": missing value");
        kv[key] = std::move(nums);
    }

    CameraConfig c;
    auto scalar = [&](const char* key, double& out) {
        const auto it = kv.find(key);
        if (it == kv.end()) return;
        if (it->second.size() != 1) throw ConfigError(std::string("camera config: ") + key + " takes one number");
        out = it->second[0];
        kv.erase(it);
    };
    double w = c.K.image_width, h = c.K.image_height;
    scalar("f_x", c.K.f_x);
    scalar("f_y", c.K.f_y);
    scalar("c_x", c.K.c_x);
    scalar("c_y", c.K.c_y);
    scalar("width", w);
    scalar("height", h);
    scalar("k1", c.K.k1);
    scalar("k2", c.K.k2);
    scalar("px_per_mm", c.px_per_mm);
    if (w != std::floor(w) || h != std::floor(h)) throw ConfigError("camera config: image size must be whole pixels");
    c.K.image_width = static_cast<int>(w);
    c.K.image_height = static_cast<int>(h);
    c.K.validate();
    if (!(c.px_per_mm > 0)) throw ConfigError("camera config: px_per_mm must be positive");

    const bool has_rt = kv.count("R") || kv.count("t");
    const bool has_markers = kv.count("markers") > 0;
    if (has_rt == has_markers) throw ConfigError("camera config needs either R and t or markers");
    if (has_rt) {
        if (!kv.count("R") || !kv.count("t")) throw ConfigError("camera config: R and t go together");
        const auto& r = kv["R"];
        const auto& t = kv["t"];
        if (r.size() != 9 || t.size() != 3) throw ConfigError("camera config: R takes 9 numbers and t takes 3");
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) c.pose.R(i, j) = r[3 * i + j];
            c.pose.t(i) = t[i];
        }
        const double orth = (c.pose.R * c.pose.R.transpose() - Eigen::Matrix3d::Identity()).norm();
        if (!(orth < 1e-4) || !(c.pose.R.determinant() > 0)) throw ConfigError("camera config: R is not a rotation");
        kv.erase("R");
        kv.erase("t");
    } else {
        const auto& m = kv["markers"];
        if (m.size() != 14) throw ConfigError("camera config: markers takes 14 numbers");
        std::vector<Point2> px;
        for (int i = 0; i < 7; ++i) px.push_back({m[2 * i], m[2 * i + 1]});
        c.pose = estimate_pose(px, MarkerPlate::standard(), c.K).pose;
        kv.erase("markers");
    }
    if (!kv.empty()) throw ConfigError("camera config: unknown key \"" + kv.begin()->first + "\"");
    return c;
}

inline CameraConfig load_camera_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_camera_config(ss.str());
}

inline std::string format_camera_config(const CameraConfig& c) {
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    std::string s;
    s += "f_x = " + num(c.K.f_x) + "\nf_y = " + num(c.K.f_y) + "\n";
    s += "c_x = " + num(c.K.c_x) + "\nc_y = " + num(c.K.c_y) + "\n";
    s += "width = " + std::to_string(c.K.image_width) + "\nheight = " + std::to_string(c.K.image_height) + "\n";
    s += "k1 = " + num(c.K.k1) + "\nk2 = " + num(c.K.k2) + "\n";
    s += "R =";
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) s += " " + num(c.pose.R(i, j));
    s += "\nt = " + num(c.pose.t(0)) + " " + num(c.pose.t(1)) + " " + num(c.pose.t(2)) + "\n";
    s += "px_per_mm = " + num(c.px_per_mm) + "\n";
    return s;
}

// ---------------------------------------------------------------------------------------------
// Frame sources

class FrameSource {
public:
    virtual ~FrameSource() = default;
    /// Called once for every layer streamed to the printer, with the toolpath actually sent.
    virtual void printed(const gcode::Layer&) {}
    /// Photograph taken after layer `layer` was printed.
    virtual GrayImage capture(int layer) = 0;
};

/// layer_0000.png, layer_0001.png, ... in one directory.
class DirectoryFrames : public FrameSource {
public:
    explicit DirectoryFrames(std::filesystem::path dir) : dir_(std::move(dir)) {
        if (!std::filesystem::is_directory(dir_)) throw IoError(dir_.string() + " is not a directory");
    }
    static std::string file_name(int layer) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "layer_%04d.png", layer);
        return buf;
    }
    GrayImage capture(int layer) override { return read_png((dir_ / file_name(layer)).string()); }

private:
    std::filesystem::path dir_;
};

/// Closed loop through the simulator: every streamed layer is deposited where it was commanded.
class SimulatedFrames : public FrameSource {
public:
    SimulatedFrames(std::vector<synth::Injection> injections, synth::SimOptions opt) : sim_(std::move(injections), std::move(opt)) {}
    void printed(const gcode::Layer& layer) override { truth_.push_back(sim_.deposit(layer)); }
    GrayImage capture(int layer) override { return sim_.render(layer); }
    const std::vector<synth::Truth>& truth() const noexcept { return truth_; }

private:
    synth::Simulator sim_;
    std::vector<synth::Truth> truth_;
};

// ---------------------------------------------------------------------------------------------
// Run

struct RunConfig {
    AnalysisConfig analysis;
    std::uint64_t seed = 1;
    int every = 1;                   // analyse every n-th layer of the range
    int first_layer = 0;             // analysed range, inclusive
    int last_layer = std::numeric_limits<int>::max();
    std::optional<double> print_time_s;  // nominal print time for the overhead figure
    std::string run_id;                  // default: derived from the seed
    SessionOptions session;

    void validate() const {
        analysis.validate();
        if (every < 1) throw ConfigError("--every must be at least 1");
        if (first_layer < 0 || last_layer < first_layer) throw ConfigError("layer range is invalid");
        if (print_time_s && !(*print_time_s > 0)) throw ConfigError("print time must be positive");
    }
    std::string id() const { return run_id.empty() ? "run-" + std::to_string(seed) : run_id; }
    bool analysed(int layer) const noexcept {
        return layer >= first_layer && layer <= last_layer && (layer - first_layer) % every == 0;
    }
};

enum class RunStatus { Completed, Paused, PrinterError };

inline const char* to_string(RunStatus s) noexcept {
    switch (s) {
        case RunStatus::Completed: return "completed";
        case RunStatus::Paused: return "paused";
        case RunStatus::PrinterError: return "printer_error";
    }
    return "?";
}

struct StageStats {
    double mean = 0.0, min = 0.0, max = 0.0;
};

struct RunSummary {
    std::string run_id;
    RunStatus status = RunStatus::Completed;
    std::string message;
    int layers_printed = 0;
    int layers_analysed = 0;
    std::size_t commands_sent = 0;
    std::map<std::string, int> failures;  // by failure type
    std::map<std::string, int> actions;   // by action kind
    std::map<std::string, StageStats> stages;
    std::optional<double> overhead_percent;
    int failure_crops = 0;

    int exit_code() const noexcept { return status == RunStatus::Completed ? 0 : status == RunStatus::Paused ? 2 : 1; }
};

namespace detail {

inline Json transform_json(const Transform2D& t) {
    return Json{{"theta_deg", rad2deg(t.theta)}, {"t_x", t.t_x}, {"t_y", t.t_y}, {"s_x", t.s_x}, {"s_y", t.s_y}};
}

inline Json action_json(const PrinterAction& a) {
    Json j{{"kind", to_string(a.kind)}};
    switch (a.kind) {
        case ActionKind::SetNozzleTemp:
        case ActionKind::SetBedTemp:
        case ActionKind::SetFeedRate: j["delta"] = a.delta; break;
        case ActionKind::RepeatLayer: j["count"] = a.count; break;
        case ActionKind::UpdateGcode:
            j["transform"] = transform_json(a.transform);
            j["pivot"] = Json::array({a.pivot.x, a.pivot.y});
            break;
        case ActionKind::PauseReport: j["reason"] = a.reason; break;
        default: break;
    }
    return j;
}

inline std::string layer_status(const Decision& d) {
    if (d.pauses()) return "paused";
    if (!d.failures.empty()) return "intervened";
    return "ok";
}

inline Json layer_json(const LayerAnalysis& a, const std::vector<std::string>& commands) {
    Json j;
    j["schema_version"] = 1;
    j["layer"] = a.layer;
    j["z"] = a.z;
    j["status"] = layer_status(a.decision);
    if (a.height)
        j["height"] = Json{{"verdict", to_string(a.height->verdict)},
                           {"mean_error", a.height->stats.mean_error},
                           {"total_error", a.height->stats.total_error},
                           {"max_abs_error", a.height->stats.max_abs_error},
                           {"missing_columns", a.height->missing_columns}};
    else
        j["height"] = nullptr;
    if (a.registration) {
        const auto& r = *a.registration;
        const auto& t = r.icp.transform;
        j["registration"] = Json{{"status", to_string(r.verdict.status)},
                                 {"theta_deg", rad2deg(t.theta)},
                                 {"t_x", t.t_x},
                                 {"t_y", t.t_y},
                                 {"s_x", t.s_x},
                                 {"s_y", t.s_y},
                                 {"residual", r.icp.residual},
                                 {"score", r.match.score},
                                 {"coarse_shift", Json::array({r.coarse_shift.x, r.coarse_shift.y})},
                                 {"coarse_angle_deg", r.coarse_angle},
                                 {"edge_points", r.edge_points},
                                 {"scale_model", "isotropic"}};
        if (!r.verdict.reason.empty()) j["registration"]["reason"] = r.verdict.reason;
    } else {
        j["registration"] = nullptr;
    }
    if (a.texture) {
        const auto& rep = a.texture->report;
        Json groups = Json::array();
        for (const auto& g : rep.groups)
            groups.push_back(Json{{"area_fraction", g.area_fraction}, {"centroid", Json::array({g.centroid.x, g.centroid.y})}});
        j["texture"] = Json{{"anomaly_fraction", rep.anomaly_fraction},
                            {"defective", rep.defective},
                            {"regions", rep.regions.size()},
                            {"groups", groups},
                            {"contrast", a.texture->contrast}};
    } else {
        j["texture"] = nullptr;
    }
    Json failures = Json::array();
    for (auto f : a.decision.failures) failures.push_back(to_string(f));
    j["failures"] = failures;
    Json actions = Json::array();
    for (const auto& act : a.decision.actions) actions.push_back(action_json(act));
    j["actions"] = actions;
    j["diagnostic"] = a.decision.diagnostic;
    j["commands"] = commands;
    j["errors"] = a.errors;
    return j;
}

/// Nozzle and bed set points from the program preamble.
inline PrinterState initial_state(const gcode::Program& p) {
    PrinterState st;
    for (const auto& c : p.preamble) {
        const auto s = c.get('S');
        if (!s) continue;
        if (c.opcode == "M104" || c.opcode == "M109") st.nozzle_temp = *s;
        if (c.opcode == "M140" || c.opcode == "M190") st.bed_temp = *s;
    }
    return st;
}

inline StageStats stage_stats(const std::vector<double>& v) {
    StageStats s;
    if (v.empty()) return s;
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    return s;
}

}  // namespace detail

inline Json summary_json(const RunSummary& s) {
    Json j;
    j["schema_version"] = 1;
    j["run_id"] = s.run_id;
    j["status"] = to_string(s.status);
    j["message"] = s.message;
    j["layers_printed"] = s.layers_printed;
    j["layers_analysed"] = s.layers_analysed;
    j["commands_sent"] = s.commands_sent;
    j["failures"] = s.failures;
    j["actions"] = s.actions;
    Json st = Json::object();
    for (const auto& [k, v] : s.stages) st[k] = Json{{"mean", v.mean}, {"min", v.min}, {"max", v.max}};
    j["stage_seconds"] = st;
    j["overhead_percent"] = s.overhead_percent ? Json(*s.overhead_percent) : Json(nullptr);
    j["failure_crops"] = s.failure_crops;
    return j;
}

/// Saves the texture crop of every defect group of a defective layer under `dir` and appends
/// one line per crop to dir/failures.jsonl. Returns the number of crops written.
inline int store_failure_crops(const LayerAnalysis& a, const std::string& run_id, const std::filesystem::path& dir,
                               const ControlConfig& control) {
    if (!a.texture || !a.texture->report.defective) return 0;
    const auto& t = *a.texture;
    std::filesystem::create_directories(dir);
    const FailureType hyp = a.layer == 0 ? FailureType::BedLevelingIssue
                                         : classify_infill_failure(TextureInput{&t.report, t.contrast, t.support_overlap}, control);
    std::ofstream index(dir / "failures.jsonl", std::ios::app);
    if (!index) throw IoError("cannot write " + (dir / "failures.jsonl").string());
    int n = 0;
    for (std::size_t g = 0; g < t.report.groups.size(); ++g) {
        const auto& grp = t.report.groups[g];
        const int m = 4;
        PixelBox b;
        b.extend(std::max(0, grp.box.x0 - m), std::max(0, grp.box.y0 - m));
        b.extend(std::min(t.image.width() - 1, grp.box.x1 + m), std::min(t.image.height() - 1, grp.box.y1 + m));
        const std::string file = "layer_" + std::to_string(a.layer) + "_" + std::to_string(g) + ".png";
        write_png((dir / file).string(), crop(t.image, b));
        Json line{{"id", run_id + "/" + std::to_string(a.layer) + "/" + std::to_string(g)},
                  {"layer", a.layer},
                  {"group", g},
                  {"area_fraction", grp.area_fraction},
                  {"centroid", Json::array({grp.centroid.x, grp.centroid.y})},
                  {"box", Json::array({b.x0, b.y0, b.x1, b.y1})},
                  {"hypothesis", to_string(hyp)},
                  {"file", file}};
        index << line.dump() << "\n";
        ++n;
    }
    return n;
}

/// Prints `program` through `printer`, analysing the selected layers with frames from `frames`,
/// and writes the run outputs under `out`. Corrections to the toolpath apply to every later layer.
inline RunSummary run_pipeline(const gcode::Program& program, FrameSource& frames, LineChannel& printer,
                               const CameraConfig& camera, const RunConfig& cfg, const std::filesystem::path& out) {
    cfg.validate();
    std::filesystem::create_directories(out);
    std::ofstream report(out / "report.jsonl", std::ios::trunc);
    std::ofstream timings(out / "timings.csv", std::ios::trunc);
    if (!report || !timings) throw IoError("cannot write to " + out.string());
    timings << "layer,io,height,registration,texture,total\n";
    const auto crop_dir = out / "failures" / cfg.id();
    std::filesystem::remove_all(crop_dir);

    AnalysisConfig acfg = cfg.analysis;
    acfg.seed = cfg.seed;
    acfg.top_view_px_per_mm = camera.px_per_mm;

    RunSummary sum;
    sum.run_id = cfg.id();
    PrinterSession session(printer, cfg.session);
    PrinterState state = detail::initial_state(program);
    ControlHistory history;
    std::vector<HeightStats> heights;
    std::vector<gcode::Layer> plan = program.layers;
    std::vector<double> t_io, t_h, t_r, t_t, t_total;

    auto send_all = [&](const std::vector<gcode::Command>& cmds) {
        for (const auto& c : cmds) session.send(c);
    };

    try {
        send_all(program.preamble);
        for (std::size_t k = 0; k < plan.size(); ++k) {
            const auto& layer = plan[k];
            auto t0 = std::chrono::steady_clock::now();
            send_all(layer.commands);
            frames.printed(layer);
            ++sum.layers_printed;
            if (!cfg.analysed(layer.index)) continue;

            const GrayImage frame = frames.capture(layer.index);
            if (frame.width() != camera.K.image_width || frame.height() != camera.K.image_height)
                throw IoError("frame of layer " + std::to_string(layer.index) + " is " + std::to_string(frame.width()) + "x" +
                              std::to_string(frame.height()) + ", camera expects " + std::to_string(camera.K.image_width) + "x" +
                              std::to_string(camera.K.image_height));
            double io = detail::seconds_since(t0);

            LayerAnalysis a = analyze_layer(frame, layer, camera.K, camera.pose, heights, history, acfg);
            ++sum.layers_analysed;

            t0 = std::chrono::steady_clock::now();
            const gcode::Layer* next = k + 1 < plan.size() ? &plan[k + 1] : nullptr;
            Emission em;
            try {
                em = emit_commands(a.decision.actions, layer, next, state, acfg.control);
            } catch (const SafetyError& e) {
                a.decision.actions = {PrinterAction::pause(std::string("unsafe action refused: ") + e.what())};
                detail::append_diag(a.decision, a.decision.actions.front().reason);
                em = emit_commands(a.decision.actions, layer, next, state, acfg.control);
            }
            history = advance(history, a.decision);
            std::vector<std::string> sent;
            for (const auto& c : em.commands) sent.push_back(gcode::to_string(c));
            report << detail::layer_json(a, sent).dump() << "\n";
            report.flush();
            send_all(em.commands);
            for (const auto& act : a.decision.actions)
                if (act.kind == ActionKind::UpdateGcode)
                    for (std::size_t j = k + 1; j < plan.size(); ++j) plan[j] = gcode::transform_layer(plan[j], act.transform, act.pivot);
            sum.failure_crops += store_failure_crops(a, sum.run_id, crop_dir, acfg.control);
            io += detail::seconds_since(t0);

            for (auto f : a.decision.failures) ++sum.failures[to_string(f)];
            for (const auto& act : a.decision.actions) ++sum.actions[to_string(act.kind)];
            a.times.io = io;
            t_io.push_back(a.times.io);
            t_h.push_back(a.times.height);
            t_r.push_back(a.times.registration);
            t_t.push_back(a.times.texture);
            t_total.push_back(a.times.total());
            char row[160];
            std::snprintf(row, sizeof row, "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", a.layer, a.times.io, a.times.height,
                          a.times.registration, a.times.texture, a.times.total());
            timings << row;

            if (a.decision.pauses()) {
                sum.status = RunStatus::Paused;
                sum.message = a.decision.diagnostic;
                break;
            }
        }
        if (sum.status == RunStatus::Completed) send_all(program.postamble);
    } catch (const SessionError& e) {
        sum.status = RunStatus::PrinterError;
        sum.message = e.what();
    } catch (const TimeoutError& e) {
        sum.status = RunStatus::PrinterError;
        sum.message = e.what();
    }

    sum.commands_sent = session.sent();
    if (!t_total.empty()) {
        sum.stages["io"] = detail::stage_stats(t_io);
        sum.stages["height"] = detail::stage_stats(t_h);
        sum.stages["registration"] = detail::stage_stats(t_r);
        sum.stages["texture"] = detail::stage_stats(t_t);
        sum.stages["total"] = detail::stage_stats(t_total);
        if (cfg.print_time_s) sum.overhead_percent = overhead_percent(sum.stages["total"].mean, sum.layers_analysed, *cfg.print_time_s);
    }
    std::ofstream(out / "summary.json", std::ios::trunc) << summary_json(sum).dump(2) << "\n";
    return sum;
}

}  // namespace layerscope
