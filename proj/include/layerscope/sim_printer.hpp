#pragma once

// Simulated printer firmware on the far end of a line channel.

#include <chrono>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gcode.hpp"
#include "session.hpp"

namespace layerscope {

struct SimFault {
    enum class Kind { Error, Delay, Silent, Halt };
    Kind kind = Kind::Error;
    std::chrono::milliseconds delay{0};  // Delay only
    std::string message = "injected";
};

/// Replies "ok" to every line after applying it to the modal state. Faults are keyed by the
/// 1-based index of the received line. The clock is virtual: a delayed reply is withheld from
/// reads until their accumulated timeouts cover the delay, so nothing actually sleeps.
class SimPrinter : public LineChannel {
public:
    SimPrinter() {
        state_.nozzle_temp = 0.0;
        state_.bed_temp = 0.0;
        state_.x_known = state_.y_known = state_.z_known = true;
    }

    void inject(std::size_t line_index, SimFault fault) { faults_[line_index] = std::move(fault); }

    void write_line(const std::string& line) override {
        if (!open_) throw IoError("channel closed");
        if (in_flight_ > 0) ++violations_;
        log_.push_back(line);
        ++in_flight_;
        max_in_flight_ = std::max(max_in_flight_, in_flight_);
        const std::size_t idx = log_.size();

        std::string ok = "ok";
        try {
            const auto cmd = gcode::parse_line(line, idx);
            std::optional<gcode::PathSegment> seg;
            std::optional<gcode::Category> hint;
            gcode::detail::apply_command(cmd, state_, seg, hint);
            if (cmd.opcode == "M0" || cmd.opcode == "M1") paused_ = true;
            if (cmd.opcode == "M108") paused_ = false;
            if (cmd.opcode == "M105")
                ok += " T:" + gcode::format_number(state_.nozzle_temp) + " /" + gcode::format_number(state_.nozzle_temp) +
                      " B:" + gcode::format_number(state_.bed_temp) + " /" + gcode::format_number(state_.bed_temp);
        } catch (const ParseError& e) {
            push("Error:" + std::string(e.what()));
        }

        auto f = faults_.find(idx);
        if (f == faults_.end()) {
            push(ok);
            return;
        }
        switch (f->second.kind) {
            case SimFault::Kind::Error:
                push("Error:" + f->second.message);
                push(ok);
                break;
            case SimFault::Kind::Delay: push(ok, f->second.delay); break;
            case SimFault::Kind::Silent: break;
            case SimFault::Kind::Halt: push("!! " + f->second.message); break;
        }
    }

    std::optional<std::string> read_line(std::chrono::milliseconds timeout) override {
        if (!open_) throw IoError("channel closed");
        if (replies_.empty()) return std::nullopt;
        auto& r = replies_.front();
        if (r.delay > timeout) {
            r.delay -= timeout;
            return std::nullopt;
        }
        std::string line = std::move(r.text);
        replies_.pop_front();
        if (line.rfind("ok", 0) == 0 || line.rfind("!!", 0) == 0) in_flight_ = 0;
        return line;
    }

    bool is_open() const override { return open_; }
    void close() override { open_ = false; }

    const std::vector<std::string>& log() const noexcept { return log_; }
    const gcode::ModalState& state() const noexcept { return state_; }
    bool paused() const noexcept { return paused_; }
    /// Lines received while an earlier one was still unacknowledged.
    std::size_t protocol_violations() const noexcept { return violations_; }
    std::size_t max_in_flight() const noexcept { return max_in_flight_; }

private:
    struct Reply {
        std::string text;
        std::chrono::milliseconds delay{0};
    };
    void push(std::string s, std::chrono::milliseconds d = {}) { replies_.push_back({std::move(s), d}); }

    gcode::ModalState state_;
    std::vector<std::string> log_;
    std::deque<Reply> replies_;
    std::map<std::size_t, SimFault> faults_;
    std::size_t in_flight_ = 0, max_in_flight_ = 0, violations_ = 0;
    bool paused_ = false;
    bool open_ = true;
};

}  // namespace layerscope
