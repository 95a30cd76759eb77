#include <gtest/gtest.h>

#include <fcntl.h>
#include <stdlib.h>
#include <unistd.h>

#include <thread>

#include "layerscope/control.hpp"
#include "layerscope/session.hpp"
#include "layerscope/sim_printer.hpp"

using namespace layerscope;
using namespace std::chrono_literals;

namespace {

gcode::Command cmd(const std::string& line) { return gcode::parse_line(line, 0); }

}  // namespace

TEST(SimPrinter, AcknowledgesAndTracksState) {
    SimPrinter sim;
    PrinterSession s(sim);
    EXPECT_NO_THROW(s.send(cmd("G1 X0 Y0")));
    s.send(cmd("M104 S200"));
    s.send(cmd("M140 S60"));
    s.send(cmd("M220 S110"));
    s.send(cmd("G1 X12.5 Y3 Z0.4"));
    EXPECT_DOUBLE_EQ(sim.state().nozzle_temp, 200);
    EXPECT_DOUBLE_EQ(sim.state().bed_temp, 60);
    EXPECT_DOUBLE_EQ(sim.state().feed_factor, 1.1);
    EXPECT_DOUBLE_EQ(sim.state().x, 12.5);
    EXPECT_EQ(sim.log().size(), 5u);
    EXPECT_EQ(sim.log()[1], "M104 S200");
}

TEST(SimPrinter, ScriptedErrorOnThirdLine) {
    SimPrinter sim;
    sim.inject(3, {});
    PrinterSession s(sim);
    s.send(cmd("G28"));
    s.send(cmd("G1 X1"));
    try {
        s.send(cmd("G1 X2"));
        FAIL() << "expected a session error";
    } catch (const SessionError& e) {
        EXPECT_NE(std::string(e.what()).find("Error:injected"), std::string::npos);
    }
    // the exchange stays in step after the error
    EXPECT_NO_THROW(s.send(cmd("G1 X3")));
    EXPECT_EQ(sim.protocol_violations(), 0u);
}

TEST(SimPrinter, HaltLine) {
    SimPrinter sim;
    sim.inject(1, {SimFault::Kind::Halt, 0ms, "thermal runaway"});
    PrinterSession s(sim);
    EXPECT_THROW(s.send(cmd("M105")), SessionError);
}

TEST(Session, CommentsAreNotSent) {
    SimPrinter sim;
    PrinterSession s(sim);
    gcode::Command c;
    c.comment = "just a note";
    s.send(c);
    s.send(cmd("G1 X5 Y5 ; move"));
    ASSERT_EQ(sim.log().size(), 1u);
    EXPECT_EQ(sim.log()[0], "G1 X5 Y5");
}

TEST(Session, Timeouts) {
    SimPrinter sim;
    sim.inject(1, {SimFault::Kind::Delay, 11s});
    PrinterSession s(sim);
    EXPECT_THROW(s.send(cmd("G1 X1")), TimeoutError);
    SimPrinter sim2;
    sim2.inject(1, {SimFault::Kind::Delay, 9s});
    sim2.inject(2, {SimFault::Kind::Delay, 100s});
    sim2.inject(3, {SimFault::Kind::Delay, 130s});
    PrinterSession t(sim2);
    EXPECT_NO_THROW(t.send(cmd("G1 X1")));
    EXPECT_NO_THROW(t.send(cmd("M104 S200")));  // temperature commands get the long timeout
    EXPECT_THROW(t.send(cmd("M140 S60")), TimeoutError);
    SimPrinter sim3;
    sim3.inject(1, {SimFault::Kind::Silent});
    PrinterSession u(sim3);
    EXPECT_THROW(u.send(cmd("G1 X2")), TimeoutError);
}

TEST(Session, ClosedChannel) {
    SimPrinter sim;
    PrinterSession s(sim);
    sim.close();
    EXPECT_THROW(s.send(cmd("G1 X1")), IoError);
}

TEST(Session, PauseResumeStatus) {
    SimPrinter sim;
    PrinterSession s(sim);
    s.send(cmd("M104 S205"));
    s.send(cmd("M140 S65"));
    auto st = s.status();
    ASSERT_TRUE(st.nozzle_temp);
    EXPECT_DOUBLE_EQ(*st.nozzle_temp, 205);
    EXPECT_DOUBLE_EQ(*st.bed_temp, 65);
    s.pause("layer 5: check the bed");
    EXPECT_TRUE(sim.paused());
    EXPECT_TRUE(s.status().paused);
    EXPECT_EQ(sim.log().back(), "M0 layer 5: check the bed");
    s.resume();
    EXPECT_FALSE(sim.paused());
    EXPECT_FALSE(s.status().paused);
}

TEST(Session, ThousandCommandsOneError) {
    SimPrinter sim;
    sim.inject(537, {});
    PrinterSession s(sim);
    std::vector<std::string> script;
    for (int i = 0; i < 1000; ++i) script.push_back("G1 X" + std::to_string(i % 100) + " Y" + std::to_string(i / 100));
    int errors = 0;
    for (const auto& l : script) try {
            s.send(cmd(l));
        } catch (const SessionError&) {
            ++errors;
        }
    EXPECT_EQ(errors, 1);
    EXPECT_EQ(sim.log(), script);
    EXPECT_EQ(sim.max_in_flight(), 1u);
    EXPECT_EQ(sim.protocol_violations(), 0u);
}

TEST(Session, CorrectiveSequenceTranscript) {
    const char* text =
        "G90\nM82\n;LAYER:0\nG1 Z0.4\nG1 X0 Y0\n;TYPE:WALL-OUTER\nG1 X10 Y0 E1\nG1 X10 Y10 E2\nG1 X0 Y10 E3\nG1 X0 Y0 E4\n";
    const auto layer = gcode::parse_gcode(text).layers.at(0);
    PrinterState ps;
    const auto em = emit_commands({PrinterAction::nozzle(5), PrinterAction::repeat(1), PrinterAction::feed(10),
                                   PrinterAction::of(ActionKind::Ironing), PrinterAction::pause("stop")},
                                  layer, nullptr, ps);
    SimPrinter sim;
    PrinterSession s(sim);
    std::vector<std::string> expect;
    for (const auto& c : em.commands) {
        s.send(c);
        const auto line = gcode::to_string(c);
        if (!c.opcode.empty()) expect.push_back(line);
    }
    EXPECT_EQ(sim.log(), expect);
    EXPECT_DOUBLE_EQ(sim.state().nozzle_temp, 205);
    EXPECT_TRUE(sim.paused());
}

TEST(Serial, PseudoTerminal) {
    const int master = posix_openpt(O_RDWR | O_NOCTTY);
    ASSERT_GE(master, 0);
    ASSERT_EQ(grantpt(master), 0);
    ASSERT_EQ(unlockpt(master), 0);
    const std::string slave = ptsname(master);
    SerialChannel ch(slave);
    std::thread firmware([master] {
        std::string buf;
        int lines = 0;
        char c;
        while (lines < 3 && read(master, &c, 1) == 1) {
            if (c != '\n') {
                buf += c;
                continue;
            }
            ++lines;
            const std::string reply = buf == "M105" ? "T:210.0 /210.0 B:60.0 /60.0\nok\n" : (lines == 2 ? "Error:bad\nok\n" : "ok\n");
            buf.clear();
            (void)!write(master, reply.data(), reply.size());
        }
    });
    PrinterSession s(ch, {2000ms, 2000ms});
    EXPECT_NO_THROW(s.send(cmd("G1 X1 Y1")));
    EXPECT_THROW(s.send(cmd("G1 X2 Y2")), SessionError);
    const auto info = s.send(cmd("M105"));
    firmware.join();
    ASSERT_EQ(info.size(), 1u);
    EXPECT_EQ(info[0], "T:210.0 /210.0 B:60.0 /60.0");
    close(master);
}

TEST(Serial, MissingDevice) { EXPECT_THROW(SerialChannel("/nonexistent/tty"), IoError); }
