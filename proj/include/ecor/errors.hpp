#pragma once

#include <stdexcept>
#include <string>

namespace ecor {

// Error taxonomy shared by the library and the CLI exit-code mapping:
// config/contract/lookup/shape problems are usage errors, numeric_error
// signals NaN/Inf failures, io_error covers the filesystem.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct shape_error : error {
    using error::error;
};

struct numeric_error : error {
    using error::error;
};

struct contract_error : error {
    using error::error;
};

struct lookup_error : error {
    using error::error;
};

struct config_error : error {
    using error::error;
};

struct io_error : error {
    using error::error;
};

}  // namespace ecor
