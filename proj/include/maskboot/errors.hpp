#pragma once

#include <stdexcept>
#include <string>

namespace maskboot {

// Bad or inconsistent configuration values. The message names the offending key.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition (shape mismatch, structure mismatch, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Version, checksum or parse failures when reading persisted artifacts.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EmptyMaskError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class InfeasibleClusteringError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

#define MASKBOOT_REQUIRE(cond, msg)                                         \
    do {                                                                    \
        if (!(cond)) throw ::maskboot::ContractError(std::string(msg));     \
    } while (0)

}  // namespace maskboot
