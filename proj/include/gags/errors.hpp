// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace gags {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed configs, unknown keys, missing required settings. CLI exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// Bad input data: file format violations, shape mismatches, missing regions,
// empty fields. CLI exit code 3.
struct DataError : Error {
    using Error::Error;
};

// Non-finite values encountered during numeric work. CLI exit code 4.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace gags
