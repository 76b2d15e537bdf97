#pragma once

#include <stdexcept>
#include <string>

namespace flowmix {

/// Base error for the library. The CLI maps subclasses onto stable exit
/// codes: configuration-like errors -> 2, I/O errors -> 3, numeric/state
/// errors -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct GenerationError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};

}  // namespace flowmix
