#pragma once

#include <stdexcept>
#include <string>

namespace pembed {

// Base class for every error thrown by the library.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid run configuration: bad dimensions, unknown mode, unparsable config file.
struct config_error : error {
    using error::error;
};

// Bad or inconsistent training data (malformed triplet file, degenerate records).
struct data_error : error {
    using error::error;
};

// NaN/Inf at an op boundary, degenerate embedding, or a failed numeric contract.
struct numeric_error : error {
    using error::error;
};

// Shape mismatch between tensors; the message names both shapes.
struct dim_error : error {
    using error::error;
};

// Sequence exceeds a model's position budget; the message names the budget.
struct length_error : error {
    using error::error;
};

// Out-of-range token id or row index.
struct lookup_error : error {
    using error::error;
};

// Violated call contract (empty input where nonempty is required, non-scalar loss, ...).
struct contract_error : error {
    using error::error;
};

// Checkpoint I/O failure with a distinct code per failure kind.
struct checkpoint_error : error {
    enum class code {
        io,
        bad_magic,
        bad_version,
        hash_mismatch,
        truncated,
        dim_mismatch,
        missing_tensor,
    };
    checkpoint_error(code c, const std::string& msg) : error(msg), kind(c) {}
    code kind;
};

}  // namespace pembed
