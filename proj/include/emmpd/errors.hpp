#pragma once

#include <stdexcept>
#include <string>

namespace emmpd {

// Base for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension / shape contract violations.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// File format and data validation failures.
struct IoError : Error {
    enum class Code {
        NotFound,
        BadMagic,
        VersionMismatch,
        Truncated,
        DimMismatch,
        EmptyBag,
        ClassMismatch,
        InvalidData,
        WriteFailed,
    };
    Code code;
    IoError(Code c, const std::string& msg) : Error(msg), code(c) {}
};

// Non-finite values or failed numerical contracts.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Bad user-supplied configuration.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace emmpd
