#pragma once

#include <stdexcept>

#include "gfagru/autodiff.hpp"  // NumericError

namespace gfagru {

/// Malformed or insufficient input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration or command-line usage.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace gfagru
