// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dprc {

// Incompatible extents, broadcast failures, element-count mismatches.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A caller broke an API contract (backward twice, non-scalar loss, bad metadata).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Invalid hyperparameters or mismatched model/data settings.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad user input: empty or too-short signals, silent sources, out-of-range values.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed file contents (WAV header, manifest line, checkpoint).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf encountered in a loss or gradient.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dprc
