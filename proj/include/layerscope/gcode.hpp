#pragma once

// Marlin-flavoured G-code: parsing into layers, path categorisation, outline extraction and
// per-layer coordinate correction.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "transform2d.hpp"

namespace layerscope::gcode {

struct Argument {
    char letter = 0;
    double value = 0.0;
    bool has_value = true;  // false for bare flags such as "G28 X"

    bool operator==(const Argument& o) const noexcept {
        return letter == o.letter && has_value == o.has_value && (!has_value || value == o.value);
    }
};

/// One source line. An empty opcode denotes a comment-only or blank line.
struct Command {
    std::string opcode;
    std::vector<Argument> arguments;
    std::string text;  // free-text payload (M117 messages, arguments of opaque opcodes)
    std::optional<std::string> comment;
    std::size_t source_line = 0;
    std::optional<std::string> raw;  // original line, dropped once the command is modified

    bool is_motion() const noexcept { return opcode == "G0" || opcode == "G1"; }
    bool is_blank() const noexcept { return opcode.empty(); }

    const Argument* find(char letter) const noexcept {
        for (const auto& a : arguments)
            if (a.letter == letter) return &a;
        return nullptr;
    }
    bool has(char letter) const noexcept { return find(letter) != nullptr; }
    std::optional<double> get(char letter) const noexcept {
        const auto* a = find(letter);
        if (!a || !a->has_value) return std::nullopt;
        return a->value;
    }
    void set(char letter, double value) {
        raw.reset();
        for (auto& a : arguments)
            if (a.letter == letter) {
                a.value = value;
                a.has_value = true;
                return;
            }
        arguments.push_back({letter, value, true});
    }

    bool operator==(const Command& o) const noexcept {
        return opcode == o.opcode && arguments == o.arguments && text == o.text && comment == o.comment;
    }
};

enum class Category { Skirt, OuterWall, InnerWall, Infill, Support, Travel };

inline const char* to_string(Category c) noexcept {
    switch (c) {
        case Category::Skirt: return "Skirt";
        case Category::OuterWall: return "OuterWall";
        case Category::InnerWall: return "InnerWall";
        case Category::Infill: return "Infill";
        case Category::Support: return "Support";
        case Category::Travel: return "Travel";
    }
    return "?";
}

struct PathSegment {
    Point2 start;
    Point2 end;
    double extrusion = 0.0;  // mm of filament, >= 0
    Category category = Category::Travel;
    std::optional<Category> type_hint;  // from slicer ";TYPE:" comments
    std::size_t command_index = 0;      // index into Layer::commands

    bool extruding() const noexcept { return extrusion > 0.0; }
    double length() const noexcept { return distance(start, end); }
};

struct LayerParams {
    double nozzle_temp = 0.0;  // degC
    double bed_temp = 0.0;     // degC
    double feed_rate = 1.0;    // M220 factor, 1 = 100 %
    double line_width = 0.4;   // mm
};

/// Machine state as tracked by the parser.
struct ModalState {
    bool absolute_xyz = true;
    bool absolute_e = true;
    double x = 0, y = 0, z = 0, e = 0;
    bool x_known = false, y_known = false, z_known = false;
    double nozzle_temp = 0.0;
    double bed_temp = 0.0;
    double feed_factor = 1.0;
};

struct Layer {
    int index = 0;
    double z = 0.0;
    double layer_height = 0.0;
    std::vector<PathSegment> segments;
    LayerParams params;
    std::vector<Command> commands;
    ModalState start_state;

    double extruded() const noexcept {
        double e = 0.0;
        for (const auto& s : segments) e += s.extrusion;
        return e;
    }
};

struct Program {
    std::vector<Layer> layers;
    std::vector<Command> preamble;
    std::vector<Command> postamble;
};

struct ParseOptions {
    double filament_diameter = 1.75;
    double default_line_width = 0.4;
};

// ---------------------------------------------------------------------------------------------
// Line level

inline std::string format_number(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::string to_string(const Command& c) {
    if (c.raw) return *c.raw;
    std::string out = c.opcode;
    for (const auto& a : c.arguments) {
        out += ' ';
        out += a.letter;
        if (a.has_value) out += format_number(a.value);
    }
    if (!c.text.empty()) {
        if (!out.empty()) out += ' ';
        out += c.text;
    }
    if (c.comment) {
        if (!out.empty()) out += ' ';
        out += ';';
        out += *c.comment;
    }
    return out;
}

namespace detail {

inline bool is_space(char c) noexcept { return c == ' ' || c == '\t' || c == '\r'; }
inline bool is_alpha(char c) noexcept { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); }
inline bool is_digit(char c) noexcept { return c >= '0' && c <= '9'; }
inline char upper(char c) noexcept { return (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c; }

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view s, double& out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc{} && r.ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool takes_text(std::string_view op) {
    return op == "M0" || op == "M1" || op == "M117" || op == "M118" || op == "M23" || op == "M28" ||
           op == "M30" || op == "M32" || op == "M928";
}

/// Opcodes whose arguments are validated strictly.
inline bool is_known(std::string_view op) {
    static constexpr std::string_view known[] = {"G0",   "G1",   "G4",   "G21",  "G28",  "G90",  "G91",
                                                  "G92",  "M82",  "M83",  "M84",  "M104", "M105", "M106",
                                                  "M107", "M109", "M140", "M190", "M220", "M221", "M108"};
    return std::find(std::begin(known), std::end(known), op) != std::end(known);
}

}  // namespace detail

/// Parses one line. Numeric arguments of known opcodes are validated; arguments of unknown
/// opcodes are kept as opaque text.
inline Command parse_line(std::string_view line, std::size_t line_no) {
    using namespace detail;
    Command cmd;
    cmd.source_line = line_no;
    cmd.raw = std::string(line);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::string_view body = line;
    if (auto semi = line.find(';'); semi != std::string_view::npos) {
        cmd.comment = std::string(line.substr(semi + 1));
        body = line.substr(0, semi);
    }
    body = trim(body);
    if (body.empty()) return cmd;

    // Optional line number and checksum framing.
    if (upper(body.front()) == 'N' && body.size() > 1 && is_digit(body[1])) {
        std::size_t i = 1;
        while (i < body.size() && is_digit(body[i])) ++i;
        body = trim(body.substr(i));
    }
    if (auto star = body.rfind('*'); star != std::string_view::npos) body = trim(body.substr(0, star));
    if (body.empty()) return cmd;

    if (!is_alpha(body.front())) throw ParseError(line_no, "expected command letter");
    std::size_t i = 1;
    while (i < body.size() && (is_digit(body[i]) || body[i] == '.')) ++i;
    std::string op(1, upper(body.front()));
    {
        std::string_view num = body.substr(1, i - 1);
        // Normalise "G01" -> "G1" while keeping sub-codes such as "M862.3".
        auto dot = num.find('.');
        std::string_view integral = num.substr(0, dot);
        while (integral.size() > 1 && integral.front() == '0') integral.remove_prefix(1);
        op += std::string(integral);
        if (dot != std::string_view::npos) op += std::string(num.substr(dot));
    }
    cmd.opcode = op;
    std::string_view rest = trim(body.substr(i));

    if (takes_text(op)) {
        cmd.text = std::string(rest);
        return cmd;
    }
    if (!is_known(op)) {
        cmd.text = std::string(rest);
        return cmd;
    }

    std::size_t p = 0;
    while (p < rest.size()) {
        if (is_space(rest[p])) {
            ++p;
            continue;
        }
        if (!is_alpha(rest[p])) throw ParseError(line_no, "unexpected character '" + std::string(1, rest[p]) + "'");
        const char letter = upper(rest[p++]);
        while (p < rest.size() && is_space(rest[p])) ++p;
        std::size_t q = p;
        while (q < rest.size() && !is_alpha(rest[q]) && !is_space(rest[q])) ++q;
        std::string_view num = rest.substr(p, q - p);
        Argument arg{letter, 0.0, !num.empty()};
        if (!num.empty() && !parse_double(num, arg.value))
            throw ParseError(line_no, "malformed number '" + std::string(num) + "' for " + std::string(1, letter));
        if (cmd.has(letter)) throw ParseError(line_no, std::string("duplicate argument ") + letter);
        cmd.arguments.push_back(arg);
        p = q;
    }
    return cmd;
}

/// Maps a slicer ";TYPE:" label (Cura and PrusaSlicer spellings) to a category.
inline std::optional<Category> category_from_type_comment(std::string_view comment) {
    comment = detail::trim(comment);
    if (comment.substr(0, 5) != "TYPE:") return std::nullopt;
    std::string t;
    for (char c : comment.substr(5)) t += detail::upper(c);
    while (!t.empty() && detail::is_space(t.back())) t.pop_back();
    if (t == "WALL-OUTER" || t == "EXTERNAL PERIMETER" || t == "OUTER WALL") return Category::OuterWall;
    if (t == "WALL-INNER" || t == "PERIMETER" || t == "INNER WALL" || t == "OVERHANG PERIMETER")
        return Category::InnerWall;
    if (t == "FILL" || t == "SKIN" || t == "INTERNAL INFILL" || t == "SOLID INFILL" || t == "TOP SOLID INFILL" ||
        t == "BRIDGE INFILL" || t == "SPARSE INFILL" || t == "INFILL")
        return Category::Infill;
    if (t.starts_with("SUPPORT")) return Category::Support;
    if (t == "SKIRT" || t == "SKIRT/BRIM" || t == "BRIM") return Category::Skirt;
    return std::nullopt;
}

inline bool is_layer_comment(const Command& c) {
    if (!c.comment) return false;
    auto s = detail::trim(*c.comment);
    return s.substr(0, 6) == "LAYER:";
}

// ---------------------------------------------------------------------------------------------
// Classification

struct ClassifyOptions {
    double closure_tolerance = -1.0;  // mm; negative means one line width
    double skirt_gap = 1.5;           // mm between a skirt loop and what it encloses
};

namespace detail {

struct Path {
    std::vector<std::size_t> segs;
    Polyline pts;
    bool closed = false;
    std::size_t order = 0;
};

inline std::vector<Path> extrusion_paths(const Layer& layer, double tol) {
    std::vector<Path> paths;
    Path cur;
    auto flush = [&] {
        if (cur.segs.empty()) return;
        cur.closed = cur.segs.size() >= 3 && distance(cur.pts.front(), cur.pts.back()) <= tol;
        if (cur.closed) cur.pts.pop_back();
        paths.push_back(std::move(cur));
        cur = Path{};
    };
    for (std::size_t i = 0; i < layer.segments.size(); ++i) {
        const auto& s = layer.segments[i];
        if (!s.extruding()) {
            if (s.length() > 1e-9) flush();
            continue;
        }
        if (!cur.segs.empty() && distance(cur.pts.back(), s.start) > 1e-6) flush();
        if (cur.segs.empty()) {
            cur.pts.push_back(s.start);
            cur.order = i;
        }
        cur.segs.push_back(i);
        cur.pts.push_back(s.end);
    }
    flush();
    return paths;
}

}  // namespace detail

/// Assigns categories. Slicer type comments are authoritative; unlabelled extrusions are
/// categorised from loop geometry. Travel segments stay Travel.
inline Layer classify_paths(Layer layer, const ClassifyOptions& opt = {}) {
    const double tol = opt.closure_tolerance >= 0 ? opt.closure_tolerance : layer.params.line_width;
    auto paths = detail::extrusion_paths(layer, tol);

    std::vector<std::size_t> loops;
    for (std::size_t i = 0; i < paths.size(); ++i)
        if (paths[i].closed) loops.push_back(i);

    auto area = [&](std::size_t p) { return std::abs(signed_area(paths[p].pts)); };
    auto contains = [&](std::size_t outer, std::size_t inner) {
        return outer != inner && area(outer) > area(inner) && point_in_polygon(paths[inner].pts.front(), paths[outer].pts);
    };

    // Skirt: an enclosing loop printed before everything it encloses and separated from it by a gap.
    std::vector<bool> skirt(paths.size(), false);
    for (std::size_t a : loops) {
        bool any = false, ok = true;
        for (std::size_t b : loops) {
            if (!contains(a, b)) continue;
            any = true;
            if (paths[b].order < paths[a].order) ok = false;
            for (const auto& v : resample_loop(paths[b].pts, 1.0))
                if (distance_to_loop(v, paths[a].pts) < opt.skirt_gap) {
                    ok = false;
                    break;
                }
            if (!ok) break;
        }
        skirt[a] = any && ok;
    }

    std::vector<Category> path_cat(paths.size(), Category::Infill);
    std::vector<std::size_t> outer_loops;
    for (std::size_t a : loops) {
        if (skirt[a]) {
            path_cat[a] = Category::Skirt;
            continue;
        }
        bool nested = false;
        for (std::size_t b : loops)
            if (!skirt[b] && contains(b, a)) nested = true;
        path_cat[a] = nested ? Category::InnerWall : Category::OuterWall;
        if (!nested) outer_loops.push_back(a);
    }
    for (std::size_t i = 0; i < paths.size(); ++i) {
        if (paths[i].closed) continue;
        const auto& s = layer.segments[paths[i].segs.front()];
        const Point2 mid = (s.start + s.end) * 0.5;
        bool inside = false;
        for (std::size_t o : outer_loops)
            if (point_in_polygon(mid, paths[o].pts)) inside = true;
        path_cat[i] = inside ? Category::Infill : Category::Support;
    }

    for (auto& s : layer.segments) s.category = Category::Travel;
    for (std::size_t i = 0; i < paths.size(); ++i)
        for (std::size_t si : paths[i].segs) layer.segments[si].category = path_cat[i];
    for (auto& s : layer.segments)
        if (s.extruding() && s.type_hint) s.category = *s.type_hint;
    return layer;
}

// ---------------------------------------------------------------------------------------------
// Parsing

namespace detail {

struct Entry {
    Command cmd;
    ModalState before;
    std::optional<PathSegment> seg;
    double z_after = 0.0;
    bool layer_comment = false;
};

inline void apply_command(const Command& c, ModalState& st, std::optional<PathSegment>& seg,
                          std::optional<Category>& type_hint) {
    const auto& op = c.opcode;
    if (c.comment)
        if (auto t = category_from_type_comment(*c.comment)) type_hint = t;
    if (op.empty()) return;
    if (op == "G2" || op == "G3") throw ParseError(c.source_line, "arc moves (G2/G3) are not supported");
    if (op == "G20") throw ParseError(c.source_line, "inch units (G20) are not supported");
    if (op == "G90") {
        st.absolute_xyz = st.absolute_e = true;
    } else if (op == "G91") {
        st.absolute_xyz = st.absolute_e = false;
    } else if (op == "M82") {
        st.absolute_e = true;
    } else if (op == "M83") {
        st.absolute_e = false;
    } else if (op == "M104" || op == "M109") {
        if (auto s = c.get('S')) st.nozzle_temp = *s;
    } else if (op == "M140" || op == "M190") {
        if (auto s = c.get('S')) st.bed_temp = *s;
    } else if (op == "M220") {
        if (auto s = c.get('S')) st.feed_factor = *s / 100.0;
    } else if (op == "G28") {
        const bool all = !c.has('X') && !c.has('Y') && !c.has('Z');
        if (all || c.has('X')) st.x = 0, st.x_known = true;
        if (all || c.has('Y')) st.y = 0, st.y_known = true;
        if (all || c.has('Z')) st.z = 0, st.z_known = true;
    } else if (op == "G92") {
        const bool all = c.arguments.empty();
        if (all || c.has('X')) st.x = c.get('X').value_or(0.0), st.x_known = true;
        if (all || c.has('Y')) st.y = c.get('Y').value_or(0.0), st.y_known = true;
        if (all || c.has('Z')) st.z = c.get('Z').value_or(0.0), st.z_known = true;
        if (all || c.has('E')) st.e = c.get('E').value_or(0.0);
    } else if (c.is_motion()) {
        for (const auto& a : c.arguments)
            if (!a.has_value && a.letter != 'F') throw ParseError(c.source_line, std::string("missing value for ") + a.letter);
        const Point2 from{st.x, st.y};
        const bool from_known = st.x_known && st.y_known;
        auto axis = [&](char letter, double& v, bool& known) {
            auto val = c.get(letter);
            if (!val) return;
            if (st.absolute_xyz) {
                v = *val;
                known = true;
            } else {
                if (!known)
                    throw ParseError(c.source_line, std::string("relative move on axis ") + letter +
                                                        " without a prior position");
                v += *val;
            }
        };
        axis('X', st.x, st.x_known);
        axis('Y', st.y, st.y_known);
        axis('Z', st.z, st.z_known);
        double de = 0.0;
        if (auto e = c.get('E')) {
            de = st.absolute_e ? *e - st.e : *e;
            st.e = st.absolute_e ? *e : st.e + *e;
        }
        PathSegment s;
        s.end = {st.x, st.y};
        s.start = from_known ? from : s.end;
        const bool moved_xy = distance(s.start, s.end) > 0.0;
        if (de > 0.0 && moved_xy) {
            if (!from_known) throw ParseError(c.source_line, "extrusion without a prior position");
            s.extrusion = de;
            s.type_hint = type_hint;
            s.category = type_hint.value_or(Category::Infill);
        }
        seg = s;
    }
}

}  // namespace detail

/// Splits a program into layers. Layer boundaries follow ";LAYER:" comments when present,
/// otherwise a Z increase at an extruding move. Every G0/G1 lands in exactly one layer.
inline Program parse_gcode(std::string_view text, const ParseOptions& opt = {}) {
    using detail::Entry;
    std::vector<Entry> entries;
    {
        ModalState st;
        std::optional<Category> hint;
        std::size_t line_no = 0;
        std::size_t pos = 0;
        while (pos < text.size()) {
            std::size_t nl = text.find('\n', pos);
            if (nl == std::string_view::npos) nl = text.size();
            ++line_no;
            Entry e;
            e.cmd = parse_line(text.substr(pos, nl - pos), line_no);
            e.before = st;
            e.layer_comment = is_layer_comment(e.cmd);
            if (e.layer_comment) hint.reset();
            detail::apply_command(e.cmd, st, e.seg, hint);
            e.z_after = st.z;
            entries.push_back(std::move(e));
            pos = nl + 1;
        }
    }

    Program prog;
    std::size_t first_motion = entries.size(), last_motion = 0;
    bool any_motion = false;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].cmd.is_motion()) {
            if (!any_motion) first_motion = i;
            last_motion = i;
            any_motion = true;
        }
    const bool comment_mode =
        std::any_of(entries.begin(), entries.end(), [](const Entry& e) { return e.layer_comment; });

    std::vector<std::size_t> starts;
    if (comment_mode) {
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].layer_comment) starts.push_back(i);
        if (any_motion && first_motion < starts.front()) starts.front() = first_motion;
    } else if (any_motion) {
        starts.push_back(first_motion);
        bool has_extrusion = false;
        double layer_z = 0.0;
        std::size_t last_extrusion = first_motion;
        for (std::size_t i = first_motion; i < entries.size(); ++i) {
            const auto& e = entries[i];
            if (!e.seg || !e.seg->extruding()) continue;
            if (has_extrusion && e.z_after > layer_z + 1e-6) {
                starts.push_back(last_extrusion + 1);
                layer_z = e.z_after;
            } else if (!has_extrusion) {
                layer_z = e.z_after;
                has_extrusion = true;
            }
            last_extrusion = i;
        }
    }

    std::size_t end = entries.size();
    if (any_motion) {
        end = last_motion + 1;
        if (comment_mode && starts.back() >= end) end = entries.size();
    } else if (!comment_mode) {
        for (auto& e : entries) prog.preamble.push_back(std::move(e.cmd));
        return prog;
    } else {
        end = entries.size();
    }

    for (std::size_t i = 0; i < starts.front(); ++i) prog.preamble.push_back(entries[i].cmd);
    const double filament_area = 0.25 * std::numbers::pi * opt.filament_diameter * opt.filament_diameter;
    double prev_z = 0.0;
    for (std::size_t li = 0; li < starts.size(); ++li) {
        const std::size_t b = starts[li];
        const std::size_t e = li + 1 < starts.size() ? starts[li + 1] : end;
        Layer layer;
        layer.index = static_cast<int>(li);
        layer.start_state = entries[b].before;
        std::optional<double> z;
        const ModalState* param_state = &entries[b].before;
        for (std::size_t i = b; i < e; ++i) {
            auto& en = entries[i];
            if (en.seg) {
                PathSegment s = *en.seg;
                s.command_index = layer.commands.size();
                if (s.extruding() && !z) {
                    z = en.z_after;
                    param_state = &en.before;
                }
                layer.segments.push_back(s);
            }
            layer.commands.push_back(en.cmd);
        }
        layer.z = z.value_or(entries[e - 1].z_after);
        layer.layer_height = layer.z - prev_z;
        prev_z = layer.z;
        layer.params.nozzle_temp = param_state->nozzle_temp;
        layer.params.bed_temp = param_state->bed_temp;
        layer.params.feed_rate = param_state->feed_factor;
        std::vector<double> widths;
        if (layer.layer_height > 0)
            for (const auto& s : layer.segments)
                if (s.extruding() && s.length() > 0.5)
                    widths.push_back(s.extrusion * filament_area / (s.length() * layer.layer_height));
        if (!widths.empty()) {
            std::nth_element(widths.begin(), widths.begin() + widths.size() / 2, widths.end());
            layer.params.line_width = std::clamp(widths[widths.size() / 2], 0.1, 2.0);
        } else {
            layer.params.line_width = opt.default_line_width;
        }
        prog.layers.push_back(classify_paths(std::move(layer)));
    }
    for (std::size_t i = end; i < entries.size(); ++i) prog.postamble.push_back(entries[i].cmd);
    return prog;
}

inline std::string serialize(const std::vector<Command>& cmds) {
    std::string out;
    for (const auto& c : cmds) {
        out += to_string(c);
        out += '\n';
    }
    return out;
}

inline std::string serialize(const Program& prog) {
    std::string out = serialize(prog.preamble);
    for (const auto& l : prog.layers) out += serialize(l.commands);
    out += serialize(prog.postamble);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Outline and correction

/// Closed OuterWall loops of a layer in print order.
inline std::vector<Polyline> layer_outline(const Layer& layer) {
    std::vector<Polyline> loops;
    Polyline cur;
    auto flush = [&] {
        if (cur.size() >= 2 && distance(cur.front(), cur.back()) <= layer.params.line_width) cur.pop_back();
        if (cur.size() >= 3) loops.push_back(std::move(cur));
        cur.clear();
    };
    for (const auto& s : layer.segments) {
        if (s.category != Category::OuterWall) {
            if (s.length() > 1e-9 || s.extruding()) flush();
            continue;
        }
        if (!cur.empty() && distance(cur.back(), s.start) > 1e-6) flush();
        if (cur.empty()) cur.push_back(s.start);
        cur.push_back(s.end);
    }
    flush();
    if (loops.empty()) throw NoOutline("layer " + std::to_string(layer.index) + " has no outer wall");
    return loops;
}

/// Pivot used for corrections: outline centroid, else the mean extrusion endpoint.
inline Point2 layer_pivot(const Layer& layer) {
    try {
        return centroid(layer_outline(layer));
    } catch (const NoOutline&) {
        Point2 acc;
        std::size_t n = 0;
        for (const auto& s : layer.segments)
            if (s.extruding()) {
                acc += s.start + s.end;
                n += 2;
            }
        return n ? acc / static_cast<double>(n) : Point2{};
    }
}

/// Applies `t` to every X/Y coordinate of the layer about `pivot`. Z, E and F are untouched.
inline Layer transform_layer(const Layer& layer, const Transform2D& t, const Point2& pivot) {
    if (!t.valid()) throw TransformError("transform must be finite with positive scale");
    if (t.is_identity()) return layer;
    Layer out = layer;
    bool abs_xyz = layer.start_state.absolute_xyz;
    double x = layer.start_state.x, y = layer.start_state.y;
    for (auto& c : out.commands) {
        if (c.opcode == "G90") abs_xyz = true;
        if (c.opcode == "G91") abs_xyz = false;
        const bool motion = c.is_motion();
        const bool g92 = c.opcode == "G92";
        if (!(motion || g92) || !(c.has('X') || c.has('Y'))) continue;
        if (motion && !abs_xyz) {
            const Point2 d = t.apply_linear({c.get('X').value_or(0.0), c.get('Y').value_or(0.0)});
            if (!is_finite(d)) throw TransformError("non-finite coordinate at line " + std::to_string(c.source_line));
            x += c.get('X').value_or(0.0);
            y += c.get('Y').value_or(0.0);
            c.set('X', d.x);
            c.set('Y', d.y);
            continue;
        }
        x = c.get('X').value_or(x);
        y = c.get('Y').value_or(y);
        const Point2 p = t.apply({x, y}, pivot);
        if (!is_finite(p)) throw TransformError("non-finite coordinate at line " + std::to_string(c.source_line));
        c.set('X', p.x);
        c.set('Y', p.y);
    }
    for (auto& s : out.segments) {
        s.start = t.apply(s.start, pivot);
        s.end = t.apply(s.end, pivot);
        if (!is_finite(s.start) || !is_finite(s.end)) throw TransformError("non-finite segment");
    }
    const Point2 sp = t.apply({out.start_state.x, out.start_state.y}, pivot);
    out.start_state.x = sp.x;
    out.start_state.y = sp.y;
    return out;
}

inline Layer transform_layer(const Layer& layer, const Transform2D& t) {
    return transform_layer(layer, t, layer_pivot(layer));
}

}  // namespace layerscope::gcode
