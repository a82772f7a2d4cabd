#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fbsde {

// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed coefficient expression. `position` is a 0-based character offset.
class ParseError : public Error {
public:
    enum class Kind { syntax, unknown_identifier, variable_not_allowed };

    ParseError(Kind kind, std::size_t position, const std::string& message);

    Kind kind() const noexcept { return kind_; }
    std::size_t position() const noexcept { return position_; }

private:
    Kind kind_;
    std::size_t position_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Explicit stepper requested on a grid that violates the stability bound.
class CflError : public Error {
public:
    CflError(double cfl, std::size_t slice, std::size_t node);

    double cfl() const noexcept { return cfl_; }

private:
    double cfl_;
};

// A NaN/inf appeared. For grid solves (index_a, index_b) = (slice, node);
// for simulations (path, step).
class NonFiniteError : public Error {
public:
    NonFiniteError(const std::string& what, std::size_t index_a, std::size_t index_b);

    std::size_t index_a() const noexcept { return a_; }
    std::size_t index_b() const noexcept { return b_; }

private:
    std::size_t a_;
    std::size_t b_;
};

class SingularSystemError : public Error {
public:
    using Error::Error;
};

}  // namespace fbsde
