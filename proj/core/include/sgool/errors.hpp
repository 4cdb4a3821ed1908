#pragma once

#include <stdexcept>
#include <string>

namespace sgool {

// Base for everything thrown by this library.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatch between operands.
struct dim_error : error {
    using error::error;
};

// Scalar input outside the mathematical domain of an op (sqrt, arcsin, log, div).
struct domain_error : error {
    using error::error;
};

// Violated precondition of a public operation.
struct contract_error : error {
    using error::error;
};

// Requested feature that is deliberately not supported (e.g. double backward).
struct unsupported_error : error {
    using error::error;
};

// Non-finite value produced where finiteness is required.
struct numeric_error : error {
    using error::error;
};

// Malformed or mismatched file contents.
struct format_error : error {
    using error::error;
};

struct io_error : error {
    using error::error;
};

struct training_error : error {
    using error::error;
};

// Reconstruction drift in the invertible sampler exceeded its guard.
struct integrity_error : error {
    using error::error;
};

// Saliency produced no usable region (degenerate map or empty mask).
struct no_salient_region : error {
    using error::error;
};

}  // namespace sgool
