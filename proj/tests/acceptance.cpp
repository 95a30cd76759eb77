// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <Eigen/Dense>

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "layerscope/analysis.hpp"
#include "layerscope/fixture.hpp"
#include "layerscope/harness.hpp"
#include "layerscope/session.hpp"
#include "layerscope/sim_printer.hpp"
#include "layerscope/synth.hpp"

using namespace layerscope;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double now() { return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count(); }

const gcode::Program& fixture(int layers) {
    static std::map<int, gcode::Program> cache;
    auto it = cache.find(layers);
    if (it == cache.end()) {
        FixtureOptions o;
        o.layers = layers;
        it = cache.emplace(layers, gcode::parse_gcode(fixture_gcode(o))).first;
    }
    return it->second;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Json> read_jsonl(const fs::path& p) {
    std::ifstream in(p);
    std::vector<Json> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(Json::parse(line));
    return out;
}

RunSummary closed_loop(const fs::path& out, int layers, const std::string& inject, const RunConfig& cfg) {
    fs::remove_all(out);
    synth::SimOptions so;
    so.seed = cfg.seed;
    SimulatedFrames frames(synth::parse_injections(inject), so);
    SimPrinter printer;
    const auto c = synth::Camera::standard();
    return run_pipeline(fixture(layers), frames, printer, {c.K, c.pose, 5.26}, cfg, out);
}

Outcome registration_envelope() {
    const auto& p = fixture(12);
    const auto cam = synth::Camera::standard();
    const int k = 10;
    const auto& L = p.layers[k];
    int ok = 0, n = 0;
    double worst_time = 0, worst_theta = 0, worst_shift = 0;
    for (double th : {0.0, 2.0, -2.0, 5.0, -5.0, 10.0, -10.0})
        for (double s : {0.0, 2.0, 4.0, 8.0})
            // nonzero shifts go once along x and once along the diagonal
            for (int dir = 0; dir < (s > 0 ? 2 : 1); ++dir) {
                const double dx = dir ? s / std::sqrt(2.0) : s, dy = dir ? -s / std::sqrt(2.0) : 0.0;
                std::vector<synth::Injection> inj;
                if (th != 0) inj.push_back(synth::parse_injection("rotate:" + gcode::format_number(th) + "@10"));
                if (s != 0)
                    inj.push_back(synth::parse_injection("shift:" + gcode::format_number(dx) + "," + gcode::format_number(dy) + "@10"));
                const auto fr = synth::render_views(p, k, inj);
                const double t0 = now();
                const auto top = virtual_top_view(fr.image, cam.K, cam.pose, L.z);
                const auto reg = register_layer(top, gcode::layer_outline(L), 0.4, gcode::layer_pivot(L));
                worst_time = std::max(worst_time, now() - t0);
                const auto& T = reg.icp.transform;
                const auto& G = fr.truth.transform;
                const double eth = std::abs(rad2deg(std::remainder(T.theta - G.theta, 2 * M_PI)));
                const double et = std::hypot(T.t_x - G.t_x, T.t_y - G.t_y);
                worst_theta = std::max(worst_theta, eth);
                worst_shift = std::max(worst_shift, et);
                ok += eth <= 0.5 && et <= 0.3;
                ++n;
            }
    const double rate = static_cast<double>(ok) / n;
    return {rate >= 0.95 && worst_time < 10.0,
            fmt("%d/%d cases (%.1f%%) within 0.5 deg and 0.3 mm, worst %.3f deg / %.3f mm, slowest %.2f s", ok, n,
                100 * rate, worst_theta, worst_shift, worst_time)};
}

Similarity linear_oracle(const std::vector<Point2>& p, const std::vector<Point2>& m) {
    Eigen::MatrixXd A(2 * p.size(), 4);
    Eigen::VectorXd b(2 * p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        A.row(2 * i) << p[i].x, -p[i].y, 1, 0;
        A.row(2 * i + 1) << p[i].y, p[i].x, 0, 1;
        b(2 * i) = m[i].x;
        b(2 * i + 1) = m[i].y;
    }
    const Eigen::Vector4d x = A.colPivHouseholderQr().solve(b);
    return {std::atan2(x(1), x(0)), std::hypot(x(0), x(1)), {x(2), x(3)}};
}

Outcome icp_oracle() {
    std::mt19937 rng(4);
    std::normal_distribution<double> nd(0, 10);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Point2> p, m;
        for (int i = 0; i < 30; ++i) {
            p.push_back({nd(rng), nd(rng)});
            m.push_back({nd(rng), nd(rng)});
        }
        const auto a = fit_similarity(p, m);
        const auto b = linear_oracle(p, m);
        worst = std::max({worst, std::abs(a.s - b.s), std::abs(std::remainder(a.theta - b.theta, 2 * M_PI)),
                          std::abs(a.tau.x - b.tau.x), std::abs(a.tau.y - b.tau.y)});
    }

    std::mt19937 r2(8);
    std::uniform_real_distribution<double> ang(-10, 10), sh(-4, 4), jitter(-0.3, 0.3), clutter(-40, 40);
    int rises = 0, iterations = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Polyline poly;
        const int n = 5 + trial % 6;
        for (int i = 0; i < n; ++i) {
            const double a = 2 * M_PI * i / n;
            const double r = 15 + 30 * std::abs(jitter(r2));
            poly.push_back({r * std::cos(a), r * std::sin(a)});
        }
        const Point2 c = centroid(poly);
        const Transform2D t{deg2rad(ang(r2)), 1, 1, sh(r2), sh(r2)};
        std::vector<Point2> src;
        for (const auto& q : resample_loop(poly, 0.2)) src.push_back(t.apply(q, c) + Point2{jitter(r2) * 0.3, jitter(r2) * 0.3});
        for (int i = 0; i < 200; ++i) src.push_back({clutter(r2), clutter(r2)});
        const auto res = icp_register(src, resample_loop(poly, 0.5), {0, 1, 1, t.t_x, t.t_y}, c);
        iterations += static_cast<int>(res.history.size());
        for (std::size_t i = 1; i < res.history.size(); ++i) rises += res.history[i] > res.history[i - 1] * (1 + 1e-9);
    }
    return {worst <= 1e-9 && rises == 0,
            fmt("closed form vs linear least squares max deviation %.2e over 100 sets; %d residual increases in %d "
                "iterations over 100 instances",
                worst, rises, iterations)};
}

Outcome height_rules() {
    const double h = 0.4;
    const int columns = 120, layers = 24;
    // verdict sequence of a synthetic run through the side view branch
    auto run = [&](const std::string& inject) {
        const auto inj = synth::parse_injections(inject);
        std::vector<HeightStats> history;
        std::vector<HeightVerdict> out;
        for (int k = 0; k < layers; ++k) {
            const auto band = synth::side_band_for_layer(k, h, columns, inj, 100 + k, {}, 5.26, (k + 4) * h);
            history.push_back(height_stats(extract_top_edge(band.view, (k + 1) * h, h)));
            out.push_back(height_verdict(history, h));
        }
        return out;
    };
    auto only = [&](const std::vector<HeightVerdict>& v, std::map<int, HeightVerdict> expect) {
        for (int k = 0; k < static_cast<int>(v.size()); ++k) {
            const auto want = expect.count(k) ? expect[k] : HeightVerdict::Ok;
            if (v[k] != want) return false;
        }
        return true;
    };
    const bool clean = only(run("none"), {});
    const bool one = only(run("height:0.6@12"), {{12, HeightVerdict::Warning}}) &&
                     only(run("height:-0.6@12"), {{12, HeightVerdict::Warning}});
    const bool two = only(run("height:0.6@12;height:0.6@13"), {{12, HeightVerdict::Warning}, {13, HeightVerdict::Failure}});
    const bool big = only(run("height:0.9@12"), {{12, HeightVerdict::Failure}}) &&
                     only(run("height:-0.9@12"), {{12, HeightVerdict::Failure}});
    return {clean && one && two && big,
            fmt("clean %d layers all Ok: %s; single 1.5h error Warning only: %s; two consecutive Failure: %s; "
                "2.25h error Failure: %s",
                layers, clean ? "yes" : "no", one ? "yes" : "no", two ? "yes" : "no", big ? "yes" : "no")};
}

Outcome texture_threshold() {
    const auto& p = fixture(12);
    const auto cam = synth::Camera::standard();
    const int k = 10;
    std::string detail;
    bool pass = true;
    for (double gap : {0.05, 0.10, 0.14, 0.16, 0.20, 0.30}) {
        const bool want = gap > 0.15;
        int right = 0;
        double lo = 1, hi = 0;
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            synth::SimOptions so;
            so.seed = seed;
            const auto fr = synth::render_views(p, k, synth::parse_injections("gap:" + gcode::format_number(gap) + "@10"), so);
            std::vector<HeightStats> heights;
            AnalysisConfig cfg;
            cfg.seed = seed;
            const auto a = analyze_layer(fr.image, p.layers[k], cam.K, cam.pose, heights, {}, cfg);
            if (!a.texture) continue;
            right += a.texture->report.defective == want;
            lo = std::min(lo, a.texture->report.anomaly_fraction);
            hi = std::max(hi, a.texture->report.anomaly_fraction);
        }
        pass = pass && right == 10;
        detail += fmt("%s%.0f%% %s %d/10 (measured %.3f-%.3f)", detail.empty() ? "" : "; ", 100 * gap,
                      want ? "defective" : "clean", right, lo, hi);
    }
    return {pass, detail};
}

Outcome filter_bank() {
    AnalysisConfig cfg;
    int size = cfg.texture_size / 3;
    if (size % 2 == 0) --size;
    const auto bank = build_lm_filterbank(size);
    std::map<KernelFamily, int> n;
    for (const auto& i : bank.info) ++n[i.family];
    const int deriv = n[KernelFamily::FirstDeriv] + n[KernelFamily::SecondDeriv];
    double worst_dc = 0;
    bool dims = true;
    for (std::size_t i = 0; i < bank.kernels.size(); ++i) {
        dims = dims && bank.kernels[i].width() == 49 && bank.kernels[i].height() == 49;
        if (!bank.zero_dc(static_cast<int>(i))) continue;
        double s = 0;
        for (double v : bank.kernels[i].data()) s += v;
        worst_dc = std::max(worst_dc, std::abs(s));
    }
    RealImage img(cfg.texture_size, cfg.texture_size);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (double& v : img.data()) v = u(rng);
    const auto r = filter_responses(img, bank);
    const bool field = r.width == 150 && r.height == 150 && r.channels == 48;
    return {bank.kernels.size() == 48 && deriv == 36 && n[KernelFamily::DoG] == 8 && n[KernelFamily::Gaussian] == 4 &&
                worst_dc <= 1e-9 && dims && size == 49 && cfg.filter_size == 49 && field,
            fmt("%zu kernels (%d derivative / %d DoG / %d Gaussian), %dx%d for a %dx%d input, max zero-DC sum %.1e, "
                "response field %dx%dx%d",
                bank.kernels.size(), deriv, n[KernelFamily::DoG], n[KernelFamily::Gaussian], size, size,
                cfg.texture_size, cfg.texture_size, worst_dc, r.width, r.height, r.channels)};
}

ResponseField gaussian_field(const std::vector<std::vector<double>>& means, double sigma, int per_blob, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, sigma);
    const int d = static_cast<int>(means[0].size());
    ResponseField f{per_blob, static_cast<int>(means.size()), d, {}};
    for (const auto& m : means)
        for (int i = 0; i < per_blob; ++i)
            for (int c = 0; c < d; ++c) f.data.push_back(m[c] + nd(rng));
    return f;
}

Outcome gmm() {
    int fits = 0, drops = 0;
    double worst_weight = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const auto f = gaussian_field({{0, 0}, {2, 1}, {1, 3}, {-2, 2}}, 1.0, 500, 100 + seed);
        for (int k : {2, 3, 5}) {
            const auto m = fit_gmm(f, k, seed);
            ++fits;
            double s = 0;
            for (double w : m.weights) s += w;
            worst_weight = std::max(worst_weight, std::abs(s - 1));
            std::vector<std::size_t> starts = m.segment_starts;
            starts.push_back(m.log_likelihood.size());
            for (std::size_t g = 0; g + 1 < starts.size(); ++g)
                for (std::size_t i = starts[g] + 1; i < starts[g + 1]; ++i) {
                    const double a = m.log_likelihood[i - 1], b = m.log_likelihood[i];
                    drops += b < a - 1e-9 * std::abs(a);
                }
        }
    }

    const auto one = gaussian_field({{1.0, -2.0, 5.0, 0.5}}, 1.7, 3000, 11);
    const auto m1 = fit_gmm(one, 1, 1);
    const std::size_t n = one.pixels();
    double worst_moment = std::abs(m1.weights[0] - 1);
    for (int c = 0; c < 4; ++c) {
        double mean = 0, var = 0;
        for (std::size_t i = 0; i < n; ++i) mean += one.data[i * 4 + c];
        mean /= n;
        for (std::size_t i = 0; i < n; ++i) var += (one.data[i * 4 + c] - mean) * (one.data[i * 4 + c] - mean);
        var /= n;
        worst_moment = std::max({worst_moment, std::abs(m1.mean(0)[c] - mean), std::abs(m1.variance(0)[c] - var)});
    }

    const double sigma = 0.8;
    const auto two = gaussian_field({{0.0, 0.0, 0.0}, {10 * sigma, 0.0, 0.0}}, sigma, 4000, 21);
    double worst_blob = 0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto m = fit_gmm(two, 2, seed);
        const int lo = m.mean(0)[0] < m.mean(1)[0] ? 0 : 1;
        for (int c = 0; c < 3; ++c) {
            worst_blob = std::max(worst_blob, std::abs(m.mean(lo)[c]));
            worst_blob = std::max(worst_blob, std::abs(m.mean(1 - lo)[c] - (c == 0 ? 10 * sigma : 0.0)));
        }
    }
    return {drops == 0 && worst_weight <= 1e-9 && worst_moment <= 1e-9 && worst_blob <= 0.1 * sigma,
            fmt("%d fits with %d likelihood decreases, max |sum w - 1| %.1e; k=1 moment error %.1e; two-blob mean error "
                "%.3f sigma",
                fits, drops, worst_weight, worst_moment, worst_blob / sigma)};
}

Outcome overhead() {
    const double v = overhead_percent(21.4, 175, 8040);
    return {std::abs(v - 46.6) <= 0.05, fmt("overhead(21.4 s, 175 layers, 8040 s) = %.3f%%", v)};
}

Outcome runtime_budget() {
    const auto& p = fixture(12);
    const auto cam = synth::Camera::standard();
    double worst = 0;
    bool complete = true;
    std::string detail;
    for (const char* inject : {"none", "gap:0.2@10", "shift:3,-2@10"}) {
        const auto fr = synth::render_views(p, 10, synth::parse_injections(inject));
        std::vector<HeightStats> heights;
        const double t0 = now();
        const auto a = analyze_layer(fr.image, p.layers[10], cam.K, cam.pose, heights, {}, {});
        const double wall = now() - t0;
        worst = std::max(worst, wall);
        complete = complete && a.height && a.registration && a.texture && a.errors.empty();
        detail += fmt("%s%s %dx%d: height %.3f s, registration %.2f s, texture %.2f s, total %.2f s",
                      detail.empty() ? "" : "; ", inject, fr.image.width(), fr.image.height(), a.times.height,
                      a.times.registration, a.times.texture, wall);
    }
    return {worst < 60.0 && complete, detail + (complete ? "" : "; a branch did not run")};
}

Outcome action_table() {
    using K = ActionKind;
    struct Row {
        int number;
        const char* failure;
        FailureType type;
        const char* action;
        std::vector<std::pair<ActionKind, int>> expect;  // kind and sign of its adjustment
    };
    const std::vector<Row> table{
        {1, "Out of filament", FailureType::OutOfFilament, "Pause/Report", {{K::PauseReport, 0}}},
        {2, "Blocked nozzle", FailureType::BlockedNozzle,
         "Increase nozzle temp; repeat previous layer a finite number of times", {{K::SetNozzleTemp, 1}, {K::RepeatLayer, 0}}},
        {3, "Missing layer", FailureType::MissingLayer, "Repeat layer", {{K::RepeatLayer, 0}}},
        {4, "Lost dimensional accuracy", FailureType::LostDimensionalAccuracy, "Update G-Code coordinates", {{K::UpdateGcode, 0}}},
        {5, "Bed leveling issue", FailureType::BedLevelingIssue, "Pause/Report; manual level recalibration", {{K::PauseReport, 0}}},
        {6, "Adhesion (warping)", FailureType::AdhesionWarping,
         "Increase bed temp; Pause/Report in case of critical vertical deviation", {{K::SetBedTemp, 1}, {K::PauseReport, 0}}},
        {7, "Not sticking to bed", FailureType::NotStickingToBed, "Increase bed temp; Pause/Report",
         {{K::SetBedTemp, 1}, {K::PauseReport, 0}}},
        {8, "Print offset/bending", FailureType::PrintOffsetBending, "Update G-Code", {{K::UpdateGcode, 0}}},
        {9, "Weak/under-extruded infill", FailureType::WeakInfill, "Increase nozzle temp and feed rate",
         {{K::SetNozzleTemp, 1}, {K::SetFeedRate, 1}}},
        {10, "Deformed infill", FailureType::DeformedInfill, "Change nozzle temp and feed rate",
         {{K::SetNozzleTemp, -1}, {K::SetFeedRate, -1}}},
        {11, "Burnt blobs", FailureType::BurntBlobs, "Ironing", {{K::Ironing, 0}}},
        {12, "Incomplete infill", FailureType::IncompleteInfill, "Patch replacement", {{K::PatchReplacement, 0}}},
        {13, "Poor surface above supports", FailureType::PoorSurfaceAboveSupports, "Change feed rate", {{K::SetFeedRate, -1}}},
        {14, "Gaps between infill and shell", FailureType::InfillShellGaps, "Change feed rate", {{K::SetFeedRate, -1}}},
    };
    int good = 0;
    std::string bad;
    for (const auto& row : table) {
        const auto got = action_for(row.type);
        bool ok = table_row(row.type) == row.number && got.size() == row.expect.size();
        for (std::size_t i = 0; ok && i < got.size(); ++i) {
            const int sign = got[i].delta > 0 ? 1 : (got[i].delta < 0 ? -1 : 0);
            ok = got[i].kind == row.expect[i].first && sign == row.expect[i].second;
        }
        if (ok) ++good;
        else bad += fmt(" [row %d %s -> %s]", row.number, row.failure, row.action);
    }
    const bool complete = std::size(all_failure_types) == table.size();
    return {good == 14 && complete, fmt("%d/14 rows match%s", good, bad.c_str())};
}

Outcome protocol() {
    SimPrinter sim;
    sim.inject(537, {});
    PrinterSession s(sim);
    std::vector<std::string> script;
    for (int i = 0; i < 1000; ++i) script.push_back("G1 X" + std::to_string(i % 100) + " Y" + std::to_string(i / 100));
    int errors = 0;
    for (const auto& l : script) try {
            s.send(gcode::parse_line(l, 0));
        } catch (const SessionError&) {
            ++errors;
        }
    const bool order = sim.log() == script;
    return {errors == 1 && order && sim.max_in_flight() == 1 && sim.protocol_violations() == 0,
            fmt("%zu lines logged, in order: %s, max in flight %zu, violations %zu, errors surfaced %d", sim.log().size(),
                order ? "yes" : "no", sim.max_in_flight(), sim.protocol_violations(), errors)};
}

Outcome determinism(const fs::path& root) {
    RunConfig cfg;
    cfg.seed = 5;
    const std::string inject = "shift:3,0@2;gap:0.2@4";
    closed_loop(root / "det_a", 6, inject, cfg);
    closed_loop(root / "det_b", 6, inject, cfg);
    const auto a = slurp(root / "det_a" / "report.jsonl"), b = slurp(root / "det_b" / "report.jsonl");
    bool timing_free = true;
    for (const auto& j : read_jsonl(root / "det_a" / "report.jsonl"))
        for (const auto& [key, v] : j.items()) timing_free = timing_free && key.find("time") == std::string::npos;
    return {!a.empty() && a == b && timing_free,
            fmt("report.jsonl %zu bytes, identical: %s, timing fields absent: %s", a.size(), a == b ? "yes" : "no",
                timing_free ? "yes" : "no")};
}

Outcome correction_closure(const fs::path& root) {
    const int k = 5;
    const auto s = closed_loop(root / "closure", 8, "shift:4,0@5", {});
    const auto rep = read_jsonl(root / "closure" / "report.jsonl");
    if (rep.size() != 8) return {false, fmt("expected 8 report lines, got %zu", rep.size())};
    const auto& at = rep[k];
    const bool corrected = at["registration"]["status"] == "Corrected";
    bool update = false;
    for (const auto& a : at["actions"]) update = update || a["kind"] == "UpdateGcode";
    const auto& next = rep[k + 1]["registration"];
    const double th = std::abs(next["theta_deg"].get<double>());
    const double d = std::hypot(next["t_x"].get<double>(), next["t_y"].get<double>());
    return {corrected && update && th <= 2.0 && d <= 1.7 && s.status == RunStatus::Completed,
            fmt("layer %d: %s, UpdateGcode %s, measured (%.2f, %.2f) mm; layer %d: %.3f deg, %.3f mm", k,
                at["registration"]["status"].get<std::string>().c_str(), update ? "sent" : "missing",
                at["registration"]["t_x"].get<double>(), at["registration"]["t_y"].get<double>(), k + 1, th, d)};
}

}  // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / "layerscope_acceptance";
    fs::create_directories(root);
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"registration envelope", registration_envelope},
        {"ICP closed form and monotone residual", icp_oracle},
        {"height rules", height_rules},
        {"texture threshold", texture_threshold},
        {"filter bank", filter_bank},
        {"GMM/EM", gmm},
        {"overhead arithmetic", overhead},
        {"per-layer runtime", runtime_budget},
        {"failure to action table", action_table},
        {"printer protocol", protocol},
        {"end-to-end determinism", [&] { return determinism(root); }},
        {"correction closure", [&] { return correction_closure(root); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        const double t0 = now();
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %2zu %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(),
                    now() - t0);
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
