#pragma once

#include <stdexcept>
#include <string>

namespace layerscope {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define LAYERSCOPE_DEFINE_ERROR(Name)            \
    class Name : public Error {                   \
    public:                                       \
        using Error::Error;                       \
    }

// gcode
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};
LAYERSCOPE_DEFINE_ERROR(NoOutline);
LAYERSCOPE_DEFINE_ERROR(TransformError);

// projection
LAYERSCOPE_DEFINE_ERROR(BehindCamera);
LAYERSCOPE_DEFINE_ERROR(PoseError);
LAYERSCOPE_DEFINE_ERROR(DelimiterError);
LAYERSCOPE_DEFINE_ERROR(EmptySideView);

// height
LAYERSCOPE_DEFINE_ERROR(EdgeNotFound);

// registration
LAYERSCOPE_DEFINE_ERROR(TemplateError);
LAYERSCOPE_DEFINE_ERROR(IcpError);

// texture
LAYERSCOPE_DEFINE_ERROR(BankError);
LAYERSCOPE_DEFINE_ERROR(SizeError);
LAYERSCOPE_DEFINE_ERROR(FitError);

// control / session
LAYERSCOPE_DEFINE_ERROR(SafetyError);
LAYERSCOPE_DEFINE_ERROR(SessionError);
LAYERSCOPE_DEFINE_ERROR(TimeoutError);
LAYERSCOPE_DEFINE_ERROR(IoError);

// harness
LAYERSCOPE_DEFINE_ERROR(ConfigError);

#undef LAYERSCOPE_DEFINE_ERROR

}  // namespace layerscope
