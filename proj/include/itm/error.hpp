#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace itm {

enum class ErrorKind {
  kIo,          // file missing, unreadable, truncated
  kParse,       // malformed JSON / TSV / config text
  kIntegrity,   // structurally valid input violating a corpus invariant
  kValidation,  // bad parameter or shape mismatch
  kProvenance,  // checksum / metadata mismatch between artifacts
  kNumeric,     // non-finite values during training
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace itm
