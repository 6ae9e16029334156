#pragma once

#include <stdexcept>
#include <string>

namespace mtnat {

// Base for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Incompatible tensor shapes (messages name both shapes).
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A caller violated an operation precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

// NaN/Inf detected during forward or backward.
class NumericError : public Error {
public:
    using Error::Error;
};

// File / serialization failures.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace mtnat
