#pragma once

#include <stdexcept>
#include <string>

namespace emns {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Vector or matrix dimensions do not agree with the model or data.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Operation is not defined for this model kind (e.g. actuation matrix of a direct model).
class KindMismatchError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of the operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed input data (CSV schema, non-numeric cells, non-finite values).
class DataError : public Error {
public:
    using Error::Error;
};

/// Model container has a schema version this build does not understand.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Model container could not be parsed or is internally inconsistent.
class CorruptedPayloadError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss, diverging optimizer and similar numerical failures.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace emns
