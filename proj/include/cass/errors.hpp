#pragma once

#include <stdexcept>
#include <string>

namespace cass {

/// Input data violates a value-level requirement (non-finite entries, wrong channel count).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Caller broke an interface contract (shape mismatch, out-of-range target, missing cells).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A configuration cannot be executed as given.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unknown architecture variant.
class RegistryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced NaN or left the admissible loss range.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cass
