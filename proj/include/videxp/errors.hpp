#pragma once

#include <stdexcept>
#include <string>

namespace videxp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (shape, range, finiteness).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// File does not follow the expected layout (bad magic, bad rank, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Header is well formed but the payload disagrees with it.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unexpected frame on the model bridge.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A model adapter failed to produce scores or gradients.
class ModelError : public Error {
 public:
  using Error::Error;
};

}  // namespace videxp
