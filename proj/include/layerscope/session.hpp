#pragma once

// Host side of the printer line protocol: one command out, wait for "ok", repeat.

#include <fcntl.h>
#include <poll.h>
#include <termios.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gcode.hpp"

namespace layerscope {

/// Bidirectional newline-terminated text channel.
class LineChannel {
public:
    virtual ~LineChannel() = default;
    virtual void write_line(const std::string& line) = 0;
    /// Next line without its terminator; nullopt when nothing arrived within `timeout`.
    virtual std::optional<std::string> read_line(std::chrono::milliseconds timeout) = 0;
    virtual bool is_open() const = 0;
    virtual void close() = 0;
};

/// POSIX serial device (or pty), raw 8N1.
class SerialChannel : public LineChannel {
public:
    explicit SerialChannel(const std::string& path, speed_t baud = B115200) {
        fd_ = ::open(path.c_str(), O_RDWR | O_NOCTTY | O_CLOEXEC);
        if (fd_ < 0) throw IoError("cannot open " + path + ": " + std::strerror(errno));
        termios tio{};
        if (::tcgetattr(fd_, &tio) == 0) {
            ::cfmakeraw(&tio);
            ::cfsetispeed(&tio, baud);
            ::cfsetospeed(&tio, baud);
            tio.c_cflag |= CLOCAL | CREAD;
            tio.c_cc[VMIN] = 0;
            tio.c_cc[VTIME] = 0;
            ::tcsetattr(fd_, TCSANOW, &tio);
        }
    }
    SerialChannel(const SerialChannel&) = delete;
    SerialChannel& operator=(const SerialChannel&) = delete;
    ~SerialChannel() override { close(); }

    void write_line(const std::string& line) override {
        if (fd_ < 0) throw IoError("channel closed");
        const std::string out = line + "\n";
        std::size_t done = 0;
        while (done < out.size()) {
            const ssize_t n = ::write(fd_, out.data() + done, out.size() - done);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw IoError(std::string("write failed: ") + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
    }

    std::optional<std::string> read_line(std::chrono::milliseconds timeout) override {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            if (fd_ < 0) throw IoError("channel closed");
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) return std::nullopt;
            pollfd p{fd_, POLLIN, 0};
            const int r = ::poll(&p, 1, static_cast<int>(left.count()));
            if (r < 0) {
                if (errno == EINTR) continue;
                throw IoError(std::string("poll failed: ") + std::strerror(errno));
            }
            if (r == 0) return std::nullopt;
            char buf[256];
            const ssize_t n = ::read(fd_, buf, sizeof buf);
            if (n > 0) buffer_.append(buf, static_cast<std::size_t>(n));
            else if (n == 0 || (p.revents & (POLLHUP | POLLERR))) throw IoError("device closed the connection");
        }
    }

    bool is_open() const override { return fd_ >= 0; }
    void close() override {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
    std::string buffer_;
};

struct SessionOptions {
    std::chrono::milliseconds timeout{10000};
    std::chrono::milliseconds temperature_timeout{120000};
};

struct PrinterStatus {
    bool paused = false;
    std::size_t sent = 0;
    std::optional<double> nozzle_temp;
    std::optional<double> bed_temp;
};

/// Single-owner protocol driver. Every command is acknowledged before the next one goes out.
class PrinterSession {
public:
    explicit PrinterSession(LineChannel& channel, SessionOptions opt = {}) : ch_(channel), opt_(opt) {}

    /// Sends one command and blocks until its "ok". Comment-only commands are not sent.
    /// Returns the informational lines received before the acknowledgment.
    std::vector<std::string> send(const gcode::Command& c) {
        gcode::Command bare = c;
        bare.comment.reset();
        if (bare.raw) {
            // strip a trailing comment from the original text
            auto s = *bare.raw;
            if (auto semi = s.find(';'); semi != std::string::npos) s.erase(semi);
            while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.pop_back();
            bare.raw = s;
        }
        const std::string line = gcode::to_string(bare);
        if (line.empty()) return {};
        const bool temp = c.opcode == "M104" || c.opcode == "M109" || c.opcode == "M140" || c.opcode == "M190";
        return send_line(line, temp ? opt_.temperature_timeout : opt_.timeout);
    }

    std::vector<std::string> send_line(const std::string& line, std::chrono::milliseconds timeout) {
        if (!ch_.is_open()) throw IoError("channel closed");
        ch_.write_line(line);
        ++sent_;
        std::vector<std::string> info;
        std::optional<std::string> error;
        for (;;) {
            auto reply = ch_.read_line(timeout);
            if (!reply && error) break;
            if (!reply) throw TimeoutError("no acknowledgment for \"" + line + "\" within " + std::to_string(timeout.count()) + " ms");
            const std::string& r = *reply;
            if (r.rfind("Error:", 0) == 0 || r.rfind("!!", 0) == 0) {
                if (!error) error = r;
                // an error is usually followed by an ok; a halt ("!!") never is
                if (r.rfind("!!", 0) == 0) break;
                continue;
            }
            if (r.rfind("ok", 0) == 0) {
                parse_temperatures(r);
                break;
            }
            if (r.rfind("echo:busy", 0) == 0) continue;
            parse_temperatures(r);
            info.push_back(r);
        }
        if (error) throw SessionError("\"" + line + "\": " + *error);
        return info;
    }

    void pause(const std::string& message = "paused") {
        gcode::Command c;
        c.opcode = "M0";
        c.text = message;
        send(c);
        paused_ = true;
    }

    void resume() {
        gcode::Command c;
        c.opcode = "M108";
        send(c);
        paused_ = false;
    }

    PrinterStatus status() {
        if (!paused_) {
            gcode::Command c;
            c.opcode = "M105";
            send(c);
        }
        return {paused_, sent_, nozzle_, bed_};
    }

    std::size_t sent() const noexcept { return sent_; }

private:
    void parse_temperatures(const std::string& r) {
        auto grab = [&](const char* key) -> std::optional<double> {
            const auto p = r.find(key);
            if (p == std::string::npos) return std::nullopt;
            const char* s = r.c_str() + p + std::strlen(key);
            char* end = nullptr;
            const double v = std::strtod(s, &end);
            if (end == s) return std::nullopt;
            return v;
        };
        if (auto t = grab("T:")) nozzle_ = t;
        if (auto b = grab("B:")) bed_ = b;
    }

    LineChannel& ch_;
    SessionOptions opt_;
    std::size_t sent_ = 0;
    bool paused_ = false;
    std::optional<double> nozzle_;
    std::optional<double> bed_;
};

}  // namespace layerscope
