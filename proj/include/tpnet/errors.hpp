#pragma once

#include <stdexcept>
#include <string>

namespace tpnet {

// Base for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/matrix shapes. Message reports both shapes.
struct DimensionError : Error {
  using Error::Error;
};

// A caller violated an operation precondition (non-scalar loss, bad ratio, ...).
struct ContractError : Error {
  using Error::Error;
};

// Malformed or missing input data (files, CSV rows, scenario specs).
struct InputError : Error {
  using Error::Error;
};

// Projection/solve failures: behind-camera points, rank-deficient systems,
// no admissible configuration.
struct GeometryError : Error {
  using Error::Error;
};

// Training diverged (NaN gradient or non-finite loss).
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace tpnet
