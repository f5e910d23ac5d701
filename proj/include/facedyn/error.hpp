#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace facedyn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input text (JSON, config, vectors file). `line` is 1-based, 0 if unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t line)
        : Error(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Caller broke a precondition.
class ContractViolation : public Error {
public:
    using Error::Error;
};

}  // namespace facedyn
