#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dsink {

/// Failure categories. Each maps onto one process exit code in the CLI.
enum class ErrorKind {
  kInvalidArgument,  // precondition violated by the caller
  kConfig,           // malformed or inconsistent configuration
  kIo,               // file missing, unreadable, or malformed
  kChecksum,         // CRC or dataset binding mismatch
  kNumerical,        // nonfinite values / solver breakdown
};

std::string_view to_string(ErrorKind kind);

/// Exit status the command-line tool uses for `kind`.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace dsink
