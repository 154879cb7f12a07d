#pragma once

#include <stdexcept>
#include <string>

namespace scribble {

// Every error raised by the library carries a short machine-readable kind
// so the CLI can print "error<TAB>kind<TAB>message" on one line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error("shape", m) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

struct ArgumentError : Error {
    explicit ArgumentError(const std::string& m) : Error("argument", m) {}
};

struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io", m) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config", m) {}
};

}  // namespace scribble
