#pragma once

#include <stdexcept>
#include <string>

namespace mfa {

// Invalid configuration file, key, or flag value.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A file or directory a command depends on does not exist or cannot be read.
class MissingInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A verification step (gradient check, divergence check) failed.
class CheckFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mfa
