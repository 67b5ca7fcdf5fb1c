#pragma once

#include <stdexcept>
#include <string>

namespace sedpost {

// Bad value passed to an operation (kernel size, threshold range, ...).
class InvalidParameter : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Inconsistent run configuration: unknown label, empty grid, too few folds.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor/axis mismatch in the network forward pass.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file; message carries file and line context.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
          line_(line) {}
    explicit ParseError(const std::string& what) : std::runtime_error(what), line_(0) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

} // namespace sedpost
