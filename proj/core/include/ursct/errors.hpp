#pragma once

#include <stdexcept>
#include <string>

namespace ursct {

// Error taxonomy shared across the library. The CLI maps each category to a
// distinct exit code, so throw sites should pick the narrowest fit.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/axis contract violations (mismatched dims, bad reshape counts).
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration values (hyperparameters, file format of configs).
struct ConfigError : Error {
    using Error::Error;
};

// Dataset-level problems: empty dirs, missing references, duplicate stems.
struct DataError : Error {
    using Error::Error;
};

// Filesystem and codec failures; message always carries the path.
struct IoError : Error {
    using Error::Error;
};

// Checkpoint/file-format violations: bad magic, version, truncation.
struct FormatError : Error {
    using Error::Error;
};

// Non-finite values or other numeric breakdown during computation.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace ursct
