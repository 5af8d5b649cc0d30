#pragma once

#include <stdexcept>
#include <string>

namespace aen {

/// Malformed or truncated file / wire payload.
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Network-level failure (unreachable endpoint, timeout, non-2xx status).
struct transport_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A cache was paired with a model it was not built from.
struct fingerprint_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace aen
