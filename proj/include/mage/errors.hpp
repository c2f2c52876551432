#pragma once

#include <stdexcept>

namespace mage {

// CLI exit-code taxonomy: config 2, data 3, numeric abort 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace mage
