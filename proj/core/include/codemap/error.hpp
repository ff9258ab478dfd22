#pragma once

#include <stdexcept>
#include <string>

namespace codemap {

enum class ErrorCode {
  invalid_argument,
  behind_camera,
  invalid_depth,
  domain,
  dimension_mismatch,
  insufficient_data,
  format,
  checksum,
  shape,
  not_found,
  numerical,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace codemap
