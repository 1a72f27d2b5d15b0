// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace leap {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand shapes or block geometry do not line up.
struct DimensionError : Error {
    using Error::Error;
};

/// A value fed into an operation is out of its admissible range (NaN score,
/// label out of range, token outside the vocabulary, ...).
struct InputError : Error {
    using Error::Error;
};

/// The API was called in the wrong order or on the wrong kind of object
/// (backward on a non-scalar, forward through a stale mask, ...).
struct UsageError : Error {
    using Error::Error;
};

/// A configuration file or constructor argument violates its contract.
struct ConfigError : Error {
    using Error::Error;
};

/// A checkpoint or other serialized artifact is corrupt or truncated.
struct FormatError : Error {
    using Error::Error;
};

/// Training failed at runtime (non-finite loss, teacher did not converge).
struct TrainingError : Error {
    using Error::Error;
};

} // namespace leap
