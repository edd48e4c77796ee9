#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nextpoi {

// Input data that violates a documented schema or contract. Maps to exit
// code 2 at the CLI boundary.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, long line = -1)
        : std::runtime_error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
          line_(line) {}
    long line() const { return line_; }

private:
    long line_;
};

// Bad configuration value (non-positive capacity, out-of-range K, ...).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing file, unwritable directory, short read.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Lookup of an id that is not present in a table or index.
class LookupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite value produced where the math guarantees finiteness. Maps to
// exit code 1 at the CLI boundary.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace nextpoi
