#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hiercls {

/// Base class for every error raised by the library. The CLI maps these to
/// exit code 2 (data error).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. `line()` is 1-based; 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Structural violations: cycles, multiple roots, invalid edits.
class TopologyError : public Error {
 public:
  using Error::Error;
};

class UnknownNodeError : public Error {
 public:
  explicit UnknownNodeError(const std::string& id) : Error("unknown node '" + id + "'"), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

}  // namespace hiercls
