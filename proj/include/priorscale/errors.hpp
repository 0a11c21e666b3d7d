#pragma once

#include <stdexcept>
#include <string>

namespace priorscale {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values (bad schedule range, incompatible sizes, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A precondition on an operation argument was violated.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// A broken internal invariant, e.g. a canvas cell no region covers.
class InternalError : public Error {
 public:
  using Error::Error;
};

// A model backend (denoiser, codec) failed or is unreachable.
class BackendError : public Error {
 public:
  using Error::Error;
};

// The captioning service failed; callers usually degrade instead of aborting.
class CaptionerError : public Error {
 public:
  using Error::Error;
};

}  // namespace priorscale
