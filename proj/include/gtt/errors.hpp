#pragma once

#include <stdexcept>

namespace gtt {

/// Invalid or inconsistent configuration (CLI exit code 1).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Unreadable, malformed or incompatible input data (CLI exit code 2).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public DataError {
public:
    using DataError::DataError;
};

/// A checked internal invariant failed (CLI exit code 3).
class InvariantError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace gtt
