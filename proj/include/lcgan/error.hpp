#pragma once

#include <stdexcept>
#include <string>

namespace lcgan {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Source code not present in the configured legend.
struct LegendError : Error {
  explicit LegendError(int code)
      : Error("unknown source class code " + std::to_string(code)), code(code) {}
  int code;
};

/// A class has zero pixels, so 1/w_c is undefined.
struct DegenerateWeightsError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ManifestError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

/// Raised by the trainer when a loss comes back NaN or infinite.
struct NonFiniteLossError : Error {
  NonFiniteLossError(const std::string& what, long long step, long long batch_index)
      : Error(what + " (step " + std::to_string(step) + ", batch " +
              std::to_string(batch_index) + ")"),
        step(step),
        batch_index(batch_index) {}
  long long step;
  long long batch_index;
};

}  // namespace lcgan
