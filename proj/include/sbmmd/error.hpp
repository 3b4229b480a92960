#pragma once

#include <stdexcept>
#include <string>

namespace sbmmd {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or dimensions of inputs do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value or argument is outside its valid domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf appeared in a state, loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// The Schrödinger-system solver failed (non-convergence, truncation, underflow).
class OracleError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file.
class IoError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ConfigError(what);
}

inline void require_dim(bool cond, const std::string& what) {
  if (!cond) throw DimensionError(what);
}

}  // namespace sbmmd
