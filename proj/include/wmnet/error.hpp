#pragma once

#include <stdexcept>
#include <string>

namespace wmnet {

enum class ErrorKind {
  ShapeMismatch,
  InvalidArgument,
  NotRecorded,
  NonFinite,
  Io,
  BadMagic,
  BadVersion,
  Truncated,
  Usage,
};

const char* to_string(ErrorKind kind);

/// Exception carrying a machine-checkable category next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace wmnet
