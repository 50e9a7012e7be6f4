// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace bmcl {

// Bad user-facing configuration (CLI exit code 2).
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite loss or gradient during optimization (CLI exit code 3).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem / format failure (CLI exit code 4).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bmcl
