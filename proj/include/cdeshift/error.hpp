#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cdeshift {

//! Base class of every error raised by the toolkit.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

//! Malformed input text. `row()` is the 1-based data row (0 for the header).
class ParseError : public Error
{
public:
  ParseError(const std::string& what, std::size_t row)
    : Error(what)
    , row_(row)
  {}
  std::size_t row() const noexcept { return row_; }
  const char* kind() const noexcept override { return "parse"; }

private:
  std::size_t row_;
};

//! Input that parses but violates a domain invariant.
class ValidationError : public Error
{
public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation"; }
};

//! Configuration error tagged with the offending field path.
class ConfigError : public Error
{
public:
  ConfigError(std::string field, const std::string& what)
    : Error(field + ": " + what)
    , field_(std::move(field))
  {}
  const std::string& field() const noexcept { return field_; }
  const char* kind() const noexcept override { return "config"; }

private:
  std::string field_;
};

//! Failure inside one stage of a multi-stage run.
class StageError : public Error
{
public:
  StageError(std::string stage, const std::string& what)
    : Error("[" + stage + "] " + what)
    , stage_(std::move(stage))
  {}
  const std::string& stage() const noexcept { return stage_; }
  const char* kind() const noexcept override { return "stage"; }

private:
  std::string stage_;
};

} // namespace cdeshift
