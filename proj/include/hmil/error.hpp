#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hmil {

enum class ErrorKind {
  kShapeMismatch,
  kIndexOutOfRange,
  kDepthExceeded,
  kParse,
  kEmptySchema,
  kFormat,
  kVersionMismatch,
  kCorruptContainer,
  kEmptyBatch,
  kSingleClass,
  kUnknownLabel,
  kInvalidArgument,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; `kind()` drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace hmil
