#pragma once

#include <stdexcept>
#include <string>

namespace erode {

// Error taxonomy for the workbench. Everything derives from std::runtime_error
// so callers that do not care about the category can catch one type.

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not conform (names the offending axis where possible).
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration value or incompatible mode/architecture pairing.
struct ConfigError : Error {
    using Error::Error;
};

// Out-of-range index (e.g. a class label >= class count).
struct IndexError : Error {
    using Error::Error;
};

// A call violated an API contract (e.g. backward on a non-scalar node).
struct ContractError : Error {
    using Error::Error;
};

// Training diverged (non-finite loss); message names the epoch.
struct TrainingError : Error {
    using Error::Error;
};

// Attack produced a non-finite gradient; message names the iteration.
struct AttackError : Error {
    using Error::Error;
};

// Model/report file could not be read or has the wrong format.
struct LoadError : Error {
    using Error::Error;
};

// Filter selected no examples; attacking nothing is a misconfiguration.
struct SelectionError : Error {
    using Error::Error;
};

// Filesystem-level failure; message includes the path.
struct IoError : Error {
    using Error::Error;
};

}  // namespace erode
