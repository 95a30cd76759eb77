#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "layerscope/gcode.hpp"

using namespace layerscope;
using namespace layerscope::gcode;

namespace {

// Two layers of a 10 mm square: outer loop plus an inset loop, 0.2 mm layers.
std::string square_program(bool layer_comments) {
    std::string g = "G28\nG90\nM82\nM104 S210\nM140 S60\nG92 E0\n";
    double e = 0.0;
    for (int k = 0; k < 2; ++k) {
        const double z = 0.4 * (k + 1);
        if (layer_comments) g += ";LAYER:" + std::to_string(k) + "\n";
        g += "G0 Z" + format_number(z) + "\n";
        for (double inset : {0.0, 1.0}) {
            const double a = inset, b = 10.0 - inset;
            g += "G0 X" + format_number(a) + " Y" + format_number(a) + "\n";
            const double pts[4][2] = {{b, a}, {b, b}, {a, b}, {a, a}};
            for (auto& p : pts) {
                e += 0.4;
                g += "G1 X" + format_number(p[0]) + " Y" + format_number(p[1]) + " E" + format_number(e) + "\n";
            }
        }
    }
    g += "M104 S0\nM84\n";
    return g;
}

std::size_t extruding(const Layer& l) {
    std::size_t n = 0;
    for (const auto& s : l.segments) n += s.extruding();
    return n;
}

}  // namespace

TEST(GcodeParse, EmptyProgramHasNoLayers) {
    EXPECT_TRUE(parse_gcode("").layers.empty());
    EXPECT_TRUE(parse_gcode("; only a comment\nM104 S200\n").layers.empty());
}

TEST(GcodeParse, SquareSplitsOnZIncrease) {
    auto p = parse_gcode(square_program(false));
    ASSERT_EQ(p.layers.size(), 2u);
    for (int k = 0; k < 2; ++k) {
        EXPECT_EQ(p.layers[k].index, k);
        EXPECT_EQ(extruding(p.layers[k]), 8u);
        EXPECT_NEAR(p.layers[k].z, 0.4 * (k + 1), 1e-12);
        EXPECT_NEAR(p.layers[k].layer_height, 0.4, 1e-12);
        EXPECT_DOUBLE_EQ(p.layers[k].params.nozzle_temp, 210.0);
        EXPECT_DOUBLE_EQ(p.layers[k].params.bed_temp, 60.0);
    }
    EXPECT_EQ(p.postamble.size(), 2u);
}

TEST(GcodeParse, LayerCommentsGiveSameSplit) {
    auto a = parse_gcode(square_program(false));
    auto b = parse_gcode(square_program(true));
    ASSERT_EQ(b.layers.size(), 2u);
    for (int k = 0; k < 2; ++k) EXPECT_EQ(extruding(a.layers[k]), extruding(b.layers[k]));
}

TEST(GcodeParse, LayerCommentsOverrideZ) {
    const char* g =
        "G28\n;LAYER:0\nG1 Z0.2\nG1 X1 Y0 E1\n;LAYER:1\nG1 X2 Y0 E2\n;LAYER:2\nG1 Z0.4\nG1 X3 Y0 E3\n";
    auto p = parse_gcode(g);
    ASSERT_EQ(p.layers.size(), 3u);
    EXPECT_EQ(extruding(p.layers[1]), 1u);
}

TEST(GcodeParse, ExtrusionAccounting) {
    auto p = parse_gcode(square_program(false));
    double total = 0.0;
    for (const auto& l : p.layers) total += l.extruded();
    EXPECT_NEAR(total, 16 * 0.4, 1e-12);
}

TEST(GcodeParse, RelativeExtrusionAndG92) {
    const char* g = "G28\nM83\nG1 Z0.2\nG1 X5 E1\nG1 X10 E0.5\nG92 E0\nG1 X10 Y5 E0.25\n";
    auto p = parse_gcode(g);
    ASSERT_EQ(p.layers.size(), 1u);
    EXPECT_NEAR(p.layers[0].extruded(), 1.75, 1e-12);
}

TEST(GcodeParse, RejectsArcsAndInches) {
    EXPECT_THROW(parse_gcode("G28\nG2 X1 Y1 I1 J0\n"), ParseError);
    EXPECT_THROW(parse_gcode("G20\n"), ParseError);
}

TEST(GcodeParse, MalformedNumberReportsLine) {
    try {
        parse_gcode("G28\nG1 X1\nG1 X1.2.3\n");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(GcodeParse, RelativeMoveWithoutPositionFails) {
    EXPECT_THROW(parse_gcode("G91\nG1 X5 E1\n"), ParseError);
    EXPECT_NO_THROW(parse_gcode("G28\nG91\nG1 X5\n"));
}

TEST(GcodeParse, TypeCommentsAreAuthoritative) {
    const char* g = "G28\nG1 Z0.2\n;TYPE:SUPPORT\nG1 X0 Y0\nG1 X10 Y0 E1\nG1 X10 Y10 E2\nG1 X0 Y10 E3\nG1 X0 Y0 E4\n";
    auto p = parse_gcode(g);
    for (const auto& s : p.layers[0].segments)
        if (s.extruding()) EXPECT_EQ(s.category, Category::Support);
}

TEST(GcodeLine, RoundTrip) {
    for (const char* line : {"G1 X10.5 Y-3 E0.123456789 F1800 ; move", "M117 Hello world", "; just a comment", "",
                             "G28 X Y", "N12 G1 X1*34", "T0", "M862.3 P \"MK3S\""}) {
        Command c = parse_line(line, 1);
        Command c2 = parse_line(to_string(c), 1);
        EXPECT_EQ(c, c2) << line;
        Command modified = c;
        modified.raw.reset();
        EXPECT_EQ(parse_line(to_string(modified), 1), c) << line;
    }
    Command c = parse_line("G01 x1", 1);
    EXPECT_EQ(c.opcode, "G1");
    EXPECT_EQ(c.get('X'), 1.0);
}

TEST(GcodeProgram, SerializeRoundTrip) {
    auto p = parse_gcode(square_program(true));
    auto q = parse_gcode(serialize(p));
    ASSERT_EQ(p.layers.size(), q.layers.size());
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        ASSERT_EQ(p.layers[k].commands.size(), q.layers[k].commands.size());
        for (std::size_t i = 0; i < p.layers[k].commands.size(); ++i)
            EXPECT_EQ(p.layers[k].commands[i], q.layers[k].commands[i]);
    }
}

TEST(GcodeClassify, WallsAndInfill) {
    std::string g = "G28\nG1 Z0.2 F1200\n";
    // skirt at 5 mm from the part, then outer, inner, infill
    auto loop = [&](double a, double b, double& e) {
        g += "G0 X" + format_number(a) + " Y" + format_number(a) + "\n";
        const double pts[4][2] = {{b, a}, {b, b}, {a, b}, {a, a}};
        for (auto& p : pts) {
            e += 0.5;
            g += "G1 X" + format_number(p[0]) + " Y" + format_number(p[1]) + " E" + format_number(e) + "\n";
        }
    };
    double e = 0;
    loop(-5, 25, e);
    loop(0, 20, e);
    loop(0.4, 19.6, e);
    g += "G0 X2 Y2\nG1 X18 Y18 E" + format_number(e + 1) + "\n";
    g += "G0 X30 Y30\nG1 X35 Y30 E" + format_number(e + 2) + "\n";
    auto p = parse_gcode(g);
    ASSERT_EQ(p.layers.size(), 1u);
    std::map<Category, int> count;
    for (const auto& s : p.layers[0].segments) count[s.category] += s.extruding();
    EXPECT_EQ(count[Category::Skirt], 4);
    EXPECT_EQ(count[Category::OuterWall], 4);
    EXPECT_EQ(count[Category::InnerWall], 4);
    EXPECT_EQ(count[Category::Infill], 1);
    EXPECT_EQ(count[Category::Support], 1);

    auto outline = layer_outline(p.layers[0]);
    ASSERT_EQ(outline.size(), 1u);
    EXPECT_NEAR(std::abs(signed_area(outline[0])), 400.0, 1e-9);
}

TEST(GcodeClassify, SkirtTooCloseIsAWall) {
    std::string g = "G28\nG1 Z0.2\nG0 X-1 Y-1\nG1 X11 Y-1 E1\nG1 X11 Y11 E2\nG1 X-1 Y11 E3\nG1 X-1 Y-1 E4\n"
                    "G0 X0 Y0\nG1 X10 Y0 E5\nG1 X10 Y10 E6\nG1 X0 Y10 E7\nG1 X0 Y0 E8\n";
    auto p = parse_gcode(g);
    EXPECT_EQ(p.layers[0].segments[2].category, Category::OuterWall);
    EXPECT_EQ(p.layers[0].segments.back().category, Category::InnerWall);
}

TEST(GcodeOutline, NoOuterWall) {
    auto p = parse_gcode("G28\nG1 Z0.2\nG1 X5 Y0 E1\n");
    EXPECT_THROW(layer_outline(p.layers[0]), NoOutline);
}

TEST(GcodeTransform, IdentityIsBitEqual) {
    auto p = parse_gcode(square_program(false));
    auto t = transform_layer(p.layers[1], Transform2D::identity());
    EXPECT_EQ(serialize(t.commands), serialize(p.layers[1].commands));
}

TEST(GcodeTransform, RotationAboutOrigin) {
    auto p = parse_gcode("G28\nG1 Z0.2\nG1 X1 Y0 E1\n");
    auto t = transform_layer(p.layers[0], {deg2rad(90.0), 1, 1, 0, 0}, {0, 0});
    const auto& seg = t.segments.back();
    EXPECT_NEAR(seg.end.x, 0.0, 1e-12);
    EXPECT_NEAR(seg.end.y, 1.0, 1e-12);
    auto cmd = t.commands[seg.command_index];
    EXPECT_NEAR(*cmd.get('X'), 0.0, 1e-12);
    EXPECT_NEAR(*cmd.get('Y'), 1.0, 1e-12);
    EXPECT_EQ(cmd.get('E'), 1.0);
}

TEST(GcodeTransform, ShiftFillsMissingAxis) {
    auto p = parse_gcode(square_program(false));
    auto t = transform_layer(p.layers[0], {0, 1, 1, 2, -3});
    auto q = parse_gcode(serialize(t.commands));
    ASSERT_EQ(q.layers.size(), 1u);
    for (std::size_t i = 0; i < t.segments.size(); ++i) {
        const auto& a = p.layers[0].segments[i];
        const auto& b = t.segments[i];
        if (!a.extruding()) continue;
        EXPECT_NEAR(b.end.x - a.end.x, 2.0, 1e-12);
        EXPECT_NEAR(b.end.y - a.end.y, -3.0, 1e-12);
    }
    for (const auto& c : t.commands)
        if (c.is_motion() && (c.has('X') || c.has('Y'))) EXPECT_TRUE(c.has('X') && c.has('Y'));
}

TEST(GcodeTransform, RelativeMovesUseLinearPart) {
    auto p = parse_gcode("G28\nG1 Z0.2\nG1 X1 Y1\nG91\nG1 X2 E1\n");
    auto t = transform_layer(p.layers[0], {deg2rad(90.0), 1, 1, 5, 5}, {0, 0});
    const auto& c = t.commands.back();
    EXPECT_NEAR(*c.get('X'), 0.0, 1e-12);
    EXPECT_NEAR(*c.get('Y'), 2.0, 1e-12);
}

TEST(GcodeTransform, InverseRoundTrip) {
    auto p = parse_gcode(square_program(false));
    const Transform2D t{deg2rad(7.0), 1.03, 1.03, 1.5, -0.7};
    auto fwd = transform_layer(p.layers[1], t);
    auto back = transform_layer(fwd, t.centered_inverse());
    for (std::size_t i = 0; i < back.segments.size(); ++i) {
        EXPECT_NEAR(back.segments[i].end.x, p.layers[1].segments[i].end.x, 1e-9);
        EXPECT_NEAR(back.segments[i].end.y, p.layers[1].segments[i].end.y, 1e-9);
    }
}

TEST(GcodeTransform, RejectsInvalid) {
    auto p = parse_gcode(square_program(false));
    EXPECT_THROW(transform_layer(p.layers[0], {0, 0, 1, 0, 0}), TransformError);
    EXPECT_THROW(transform_layer(p.layers[0], {NAN, 1, 1, 0, 0}), TransformError);
}
