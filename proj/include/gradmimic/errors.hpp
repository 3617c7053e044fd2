#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gradmimic {

/// Bad sizes, out-of-range parameters, mismatched layouts.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A quantity is mathematically undefined for the given input
/// (zero-variance correlation, zero-length target vector, ...).
class DegenerateError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed file contents. `line()` is 1-based; 0 when the whole file is at fault.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Invalid run configuration. Carries the offending `section.key`.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error(key + ": " + what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

}  // namespace gradmimic
