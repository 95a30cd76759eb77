#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "layerscope/fixture.hpp"
#include "layerscope/harness.hpp"
#include "layerscope/sim_printer.hpp"

using namespace layerscope;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& s) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out || !(out << s)) throw IoError("cannot write " + p.string());
}

std::pair<int, int> parse_range(const std::string& s) {
    auto num = [&](const std::string& t) {
        std::size_t used = 0;
        int v = -1;
        try {
            v = std::stoi(t, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != t.size() || v < 0) throw ConfigError("bad layer range \"" + s + "\"");
        return v;
    };
    const auto dots = s.find("..");
    if (dots == std::string::npos) {
        const int v = num(s);
        return {v, v};
    }
    const int a = num(s.substr(0, dots)), b = num(s.substr(dots + 2));
    if (b < a) throw ConfigError("bad layer range \"" + s + "\"");
    return {a, b};
}

int cmd_fixture(const fs::path& out, int layers) {
    FixtureOptions o;
    o.layers = layers;
    write_file(out, fixture_gcode(o));
    std::printf("wrote %s (%d layers)\n", out.string().c_str(), layers);
    return 0;
}

int cmd_synth(const fs::path& gcode_path, const std::string& inject, const fs::path& out, std::uint64_t seed,
              const std::string& range) {
    const auto program = gcode::parse_gcode(read_file(gcode_path));
    if (program.layers.empty()) throw ConfigError("the program has no layers");
    auto [first, last] = range.empty() ? std::pair{0, static_cast<int>(program.layers.size()) - 1} : parse_range(range);
    last = std::min(last, static_cast<int>(program.layers.size()) - 1);
    synth::SimOptions so;
    so.seed = seed;
    synth::Simulator sim(synth::parse_injections(inject), so);
    fs::create_directories(out);
    std::ofstream truth(out / "truth.jsonl", std::ios::trunc);
    for (int k = 0; k <= last; ++k) {
        const auto t = sim.deposit(program.layers[k]);
        if (k < first) continue;
        write_png((out / DirectoryFrames::file_name(k)).string(), sim.render(k));
        Json j{{"layer", t.layer},
               {"deposited", t.deposited},
               {"transform", detail::transform_json(t.transform)},
               {"pivot", Json::array({t.pivot.x, t.pivot.y})},
               {"nominal_top_z", t.nominal_top_z},
               {"top_z", t.top_z},
               {"anomaly_fraction", t.anomaly_fraction},
               {"injections", t.injections}};
        truth << j.dump() << "\n";
    }
    write_file(out / "camera.cfg", format_camera_config({so.camera.K, so.camera.pose, so.top_view_px_per_mm}));
    std::printf("wrote layers %d..%d to %s\n", first, last, out.string().c_str());
    return 0;
}

int cmd_analyze(const fs::path& gcode_path, const std::string& frames_spec, const fs::path& camera_path, const fs::path& out,
                const std::string& printer_spec, std::uint64_t seed, int every, const std::string& range,
                std::optional<double> print_time) {
    const auto program = gcode::parse_gcode(read_file(gcode_path));
    const CameraConfig camera = load_camera_config(camera_path);
    RunConfig cfg;
    cfg.seed = seed;
    cfg.every = every;
    if (!range.empty()) std::tie(cfg.first_layer, cfg.last_layer) = parse_range(range);
    cfg.print_time_s = print_time;

    std::unique_ptr<FrameSource> frames;
    if (frames_spec.rfind("synth:", 0) == 0) {
        synth::SimOptions so;
        so.seed = seed;
        so.camera = {camera.K, camera.pose};
        so.top_view_px_per_mm = camera.px_per_mm;
        frames = std::make_unique<SimulatedFrames>(synth::parse_injections(frames_spec.substr(6)), so);
    } else {
        frames = std::make_unique<DirectoryFrames>(frames_spec);
    }
    std::unique_ptr<LineChannel> printer;
    if (printer_spec == "sim") printer = std::make_unique<SimPrinter>();
    else if (printer_spec.rfind("serial:", 0) == 0) printer = std::make_unique<SerialChannel>(printer_spec.substr(7));
    else throw ConfigError("--printer must be sim or serial:<device>");

    const auto s = run_pipeline(program, *frames, *printer, camera, cfg, out);
    std::printf("%s: %s, %d layers printed, %d analysed, %zu commands sent\n", s.run_id.c_str(), to_string(s.status),
                s.layers_printed, s.layers_analysed, s.commands_sent);
    if (!s.message.empty()) std::printf("  %s\n", s.message.c_str());
    for (const auto& [name, st] : s.stages) std::printf("  %-12s mean %.3f s  min %.3f  max %.3f\n", name.c_str(), st.mean, st.min, st.max);
    if (s.overhead_percent) std::printf("  overhead %.2f %% of the print time\n", *s.overhead_percent);
    return s.exit_code();
}

int cmd_report(const fs::path& in) {
    std::ifstream rep(in / "report.jsonl");
    if (!rep) throw IoError("no report.jsonl in " + in.string());
    std::printf("%5s %-10s %-7s %-9s %7s %7s %6s  %s\n", "layer", "status", "height", "outline", "dx", "dy", "infill", "actions");
    std::string line;
    while (std::getline(rep, line)) {
        if (line.empty()) continue;
        const auto j = Json::parse(line);
        const auto& h = j["height"];
        const auto& r = j["registration"];
        const auto& t = j["texture"];
        std::string acts;
        for (const auto& a : j["actions"]) acts += (acts.empty() ? "" : ",") + a["kind"].get<std::string>();
        std::printf("%5d %-10s %-7s %-9s %7.2f %7.2f %6.3f  %s\n", j["layer"].get<int>(), j["status"].get<std::string>().c_str(),
                    h.is_null() ? "-" : h["verdict"].get<std::string>().c_str(),
                    r.is_null() ? "-" : r["status"].get<std::string>().c_str(), r.is_null() ? 0.0 : r["t_x"].get<double>(),
                    r.is_null() ? 0.0 : r["t_y"].get<double>(), t.is_null() ? 0.0 : t["anomaly_fraction"].get<double>(),
                    acts.c_str());
    }
    if (fs::exists(in / "summary.json")) {
        const auto s = Json::parse(read_file(in / "summary.json"));
        std::printf("\n%s\n", s.dump(2).c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-wise print monitoring: compare camera frames of each printed layer with its G-code."};
    app.require_subcommand(1);

    auto* fx = app.add_subcommand("fixture", "Write the fox-head test part G-code");
    fs::path fx_out;
    int fx_layers = 175;
    fx->add_option("--out", fx_out, "Output G-code file")->required();
    fx->add_option("--layers", fx_layers, "Number of layers")->check(CLI::PositiveNumber);

    auto* sy = app.add_subcommand("synth", "Render synthetic frames of a G-code print with injected failures");
    fs::path sy_gcode, sy_out;
    std::string sy_inject = "none", sy_range;
    std::uint64_t sy_seed = 1;
    sy->add_option("--gcode", sy_gcode, "G-code file")->required()->check(CLI::ExistingFile);
    sy->add_option("--inject", sy_inject, "Injections, e.g. \"shift:4,0@5;gap:0.2@8\"");
    sy->add_option("--out", sy_out, "Output directory")->required();
    sy->add_option("--seed", sy_seed, "Noise seed");
    sy->add_option("--layers", sy_range, "Layers to render, a..b");

    auto* an = app.add_subcommand("analyze", "Print and monitor a job layer by layer");
    fs::path an_gcode, an_camera, an_out;
    std::string an_frames, an_printer = "sim", an_range;
    std::uint64_t an_seed = 1;
    int an_every = 1;
    std::optional<double> an_print_time;
    an->add_option("--gcode", an_gcode, "G-code file")->required()->check(CLI::ExistingFile);
    an->add_option("--frames", an_frames, "Directory of layer_NNNN.png frames, or synth:<injections>")->required();
    an->add_option("--camera", an_camera, "Camera configuration")->required()->check(CLI::ExistingFile);
    an->add_option("--out", an_out, "Output directory")->required();
    an->add_option("--printer", an_printer, "sim or serial:<device>");
    an->add_option("--seed", an_seed, "Seed for clustering and synthetic frames");
    an->add_option("--every", an_every, "Analyse every n-th layer")->check(CLI::PositiveNumber);
    an->add_option("--layers", an_range, "Analysed layers, a..b");
    an->add_option("--print-time", an_print_time, "Nominal print time in seconds, for the overhead figure");

    auto* rp = app.add_subcommand("report", "Summarize a run directory");
    fs::path rp_in;
    rp->add_option("--in", rp_in, "Run output directory")->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*fx) return cmd_fixture(fx_out, fx_layers);
        if (*sy) return cmd_synth(sy_gcode, sy_inject, sy_out, sy_seed, sy_range);
        if (*an) return cmd_analyze(an_gcode, an_frames, an_camera, an_out, an_printer, an_seed, an_every, an_range, an_print_time);
        if (*rp) return cmd_report(rp_in);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
