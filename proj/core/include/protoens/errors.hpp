#pragma once

#include <stdexcept>
#include <string>

namespace protoens {

/// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input outside the domain of a function (log of non-positive, division by zero, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Caller broke a precondition that is not about values (non-scalar loss, missing grad, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SamplingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnsupportedConfigurationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace protoens
