#pragma once

#include <stdexcept>
#include <string>

namespace aat {

// Error taxonomy shared across the library. CLI maps ConfigError (and CLI
// parse failures) to exit code 2, everything else to 1.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LookupError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace aat
