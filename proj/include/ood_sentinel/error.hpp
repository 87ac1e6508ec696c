#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ood {

/// Failure classes raised by the engine. Each maps onto one CLI exit code.
enum class ErrorKind {
    Usage,
    Parse,
    Configuration,
    Format,
    Corruption,
    Size,
    Io,
    Validation,
    Data,
    Dimension,
    DegenerateVector,
    Alignment,
    InsufficientData,
    Domain,
    DegenerateSamples,
    Numeric,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage: return "usage error";
        case ErrorKind::Parse: return "parse error";
        case ErrorKind::Configuration: return "configuration error";
        case ErrorKind::Format: return "format error";
        case ErrorKind::Corruption: return "corruption error";
        case ErrorKind::Size: return "size error";
        case ErrorKind::Io: return "I/O error";
        case ErrorKind::Validation: return "validation error";
        case ErrorKind::Data: return "data error";
        case ErrorKind::Dimension: return "dimension error";
        case ErrorKind::DegenerateVector: return "degenerate-vector error";
        case ErrorKind::Alignment: return "alignment error";
        case ErrorKind::InsufficientData: return "insufficient-data error";
        case ErrorKind::Domain: return "domain error";
        case ErrorKind::DegenerateSamples: return "degenerate-samples error";
        case ErrorKind::Numeric: return "numeric error";
    }
    return "error";
}

/// CLI exit code: 2 usage, 3 format, 4 data, 5 numeric.
inline int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage:
        case ErrorKind::Parse:
        case ErrorKind::Configuration:
            return 2;
        case ErrorKind::Format:
        case ErrorKind::Corruption:
        case ErrorKind::Size:
        case ErrorKind::Io:
        case ErrorKind::Validation:
            return 3;
        case ErrorKind::Data:
        case ErrorKind::Dimension:
        case ErrorKind::DegenerateVector:
        case ErrorKind::Alignment:
        case ErrorKind::InsufficientData:
            return 4;
        case ErrorKind::Domain:
        case ErrorKind::DegenerateSamples:
        case ErrorKind::Numeric:
            return 5;
    }
    return 1;
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    /// Same failure class, message prefixed with `context: `.
    Error with_context(std::string_view context) const {
        return Error(kind_, std::string(context) + ": " + what());
    }

private:
    ErrorKind kind_;
};

/// Parse failure carrying the byte offset of the offending input.
class ParseError : public Error {
public:
    ParseError(const std::string& message, std::size_t position)
        : Error(ErrorKind::Parse, message + " at position " + std::to_string(position)),
          position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

}  // namespace ood
