#pragma once

#include <stdexcept>
#include <string>

namespace fosl {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration / input files.
class ConfigError : public Error {
public:
    using Error::Error;
};

class NoEquilibrium : public Error {
public:
    using Error::Error;
};

class SingularAlgebraicBlock : public Error {
public:
    using Error::Error;
};

class ResonantBin : public Error {
public:
    using Error::Error;
};

class EmptyBand : public Error {
public:
    using Error::Error;
};

class GridMismatch : public Error {
public:
    using Error::Error;
};

class NotPositiveDefinite : public Error {
public:
    using Error::Error;
};

class IndefiniteHessian : public Error {
public:
    using Error::Error;
};

class IntegrationDiverged : public Error {
public:
    using Error::Error;
};

class IngestionError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

} // namespace fosl
