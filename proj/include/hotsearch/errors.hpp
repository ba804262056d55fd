#pragma once

#include <stdexcept>
#include <string>

namespace hotsearch {

// Base of every error the library throws. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file: the message names the offending field.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a structural invariant (shapes, DAG, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A design or configuration that does not fit the FPGA resources.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class UnsupportedTopologyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace hotsearch
