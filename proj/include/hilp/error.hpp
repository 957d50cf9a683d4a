#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hilp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Raised for malformed map text (ragged rows, no free cells, disconnected).
class InvalidMap : public Error {
 public:
  using Error::Error;
};

class InvalidDataset : public Error {
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

// A config field failed validation. field() names the offending key.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)), reason_(what) {}

  const std::string& field() const noexcept { return field_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string field_;
  std::string reason_;
};

// A pipeline stage failed; wraps the underlying diagnostic with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// A policy was asked to act in a state where the dataset never observed an action.
class NoActionError : public Error {
 public:
  NoActionError(std::size_t state, const std::string& what)
      : Error(what + " (state " + std::to_string(state) + ")"), state_(state) {}

  std::size_t state() const noexcept { return state_; }

 private:
  std::size_t state_;
};

// A theorem implication was violated. Never expected; indicates a bug.
class TheoryDefect : public Error {
 public:
  using Error::Error;
};

}  // namespace hilp
