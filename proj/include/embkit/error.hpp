#pragma once

#include <stdexcept>
#include <string>

namespace embkit {

// Root of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input record; message carries "path:line".
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Binary file whose header or payload is inconsistent.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given input (no positives, constant ranks, ...).
class MetricError : public Error {
 public:
  using Error::Error;
};

// External encoder misbehaved: bad handshake, wrong row count, timeout.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class NonFiniteError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

}  // namespace embkit
