#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace samst {

// Base of every error the library raises. The CLI maps subclasses onto
// stable exit codes (see tools/samst_cli.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Misuse of an API contract (non-scalar loss, alpha out of range, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed anywhere in the numeric core.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed file or byte stream. Carries the byte offset when known.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what, std::size_t offset = npos)
      : Error(offset == npos ? what
                             : what + " (at byte offset " +
                                   std::to_string(offset) + ")"),
        offset_(offset) {}

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Codebook incompatibility or id conflicts.
class CodebookError : public Error {
 public:
  using Error::Error;
};

}  // namespace samst
