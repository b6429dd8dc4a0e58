#pragma once

#include <stdexcept>
#include <string>

namespace kap {

// Base of every exception thrown by the library. The CLI maps the concrete
// type onto an exit code, so new error kinds should derive from one of the
// categories below rather than from Error directly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class BuildError : public Error {
 public:
  BuildError(std::size_t layer_index, const std::string& what)
      : Error("layer " + std::to_string(layer_index) + ": " + what),
        layer_index_(layer_index) {}

  std::size_t layer_index() const { return layer_index_; }

 private:
  std::size_t layer_index_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class AttackError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace kap
