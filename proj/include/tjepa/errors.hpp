#pragma once
#include <stdexcept>
#include <string>

namespace tjepa {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor dimensions do not conform.
struct shape_error : error {
    using error::error;
};

// Invalid hyperparameter / config file contents.
struct config_error : error {
    using error::error;
};

// API contract violated (non-scalar backward, gradient into a stop-gradient path, ...).
struct contract_error : error {
    using error::error;
};

// Malformed input data (CSV, JSON, checkpoint container).
struct parse_error : error {
    using error::error;
};

struct io_error : error {
    using error::error;
};

}  // namespace tjepa
