#pragma once

#include <stdexcept>
#include <string>

namespace qstar {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UnimplementedError : std::runtime_error {
    explicit UnimplementedError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace qstar
