#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lpr {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input file. `location` is a 1-based line number
/// for text formats and a byte offset for binary formats (0 when unknown).
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t location = 0)
        : Error(what), location_(location) {}

    std::size_t location() const noexcept { return location_; }

private:
    std::size_t location_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace lpr
