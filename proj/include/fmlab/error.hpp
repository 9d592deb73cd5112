#pragma once

#include <stdexcept>
#include <string>

namespace fmlab {

// Base of every error the library raises; carries a human-readable message.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A time value outside the interpolant's domain.
class DomainError : public Error {
public:
    using Error::Error;
};

// Posterior/oracle evaluation at a time where sigma_t == 0.
class SingularTimeError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent configuration (unknown key, bad value, unsupported combination).
class ConfigError : public Error {
public:
    using Error::Error;
};

class InvariantError : public Error {
public:
    using Error::Error;
};

// Non-finite loss or gradient during training.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace fmlab
