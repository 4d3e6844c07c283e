#pragma once

#include <stdexcept>
#include <string>

namespace carnot {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// Non-finite or malformed numeric input.
class InputError : public Error {
public:
    using Error::Error;
};

/// Operation not defined for the given shape or body (e.g. the polynomial
/// Casimir for even k).
class UnsupportedError : public Error {
public:
    using Error::Error;
};

/// Enumeration too large (k above the configured ceiling).
class SizeError : public Error {
public:
    using Error::Error;
};

/// Argument outside the domain of a function (e.g. gradient of H at 0).
class DomainError : public Error {
public:
    using Error::Error;
};

/// H(h) = 0, i.e. the abnormal case.
class NormalizationError : public DomainError {
public:
    using DomainError::DomainError;
};

/// Control body is not strictly convex, or does not contain 0 in its interior.
class BodyError : public Error {
public:
    using Error::Error;
};

class IntegrationError : public Error {
public:
    IntegrationError(const std::string& what, double last_time)
        : Error(what), last_time_(last_time) {}

    double last_time() const noexcept { return last_time_; }

private:
    double last_time_;
};

/// Period detection could not find a monotone winding or failed closure.
class DetectionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace carnot
