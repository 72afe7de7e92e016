/**
 * @file error.hpp
 * @brief Exception types shared by every module.
 *
 * Each category maps to one CLI exit code and one HTTP status class, so the
 * tools layer never has to inspect message text.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace geofeat {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad or inconsistent configuration (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Missing, malformed or out-of-contract input data (CLI exit code 3).
class InputError : public Error {
public:
    using Error::Error;
};

/// Runtime failure after which a rerun with --resume can continue (exit code 4).
class ResumableError : public Error {
public:
    using Error::Error;
};

}  // namespace geofeat
