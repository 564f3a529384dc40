#pragma once

#include <stdexcept>
#include <string>

namespace dine {

/// Violated precondition of an operation (bad probability vector, r out of range, ...).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Tensor shapes or feature widths that do not line up.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A sample id that is not present in a memory bank or cache.
struct LookupError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Network failure talking to a remote predictor. Retryable.
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed request sent to a predictor service.
struct RequestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed checkpoint, cache or config file.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dine
