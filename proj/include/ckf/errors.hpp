#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ckf {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid model or run configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// An event arrived with a timestamp earlier than the state it would update.
class TimeOrderError : public Error {
public:
  using Error::Error;
};

/// A belief failed its symmetry / positive-definiteness contract.
class InvariantError : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class CheckpointError : public Error {
public:
  using Error::Error;
};

}  // namespace ckf
