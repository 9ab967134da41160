#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace doccog {

// Every failure carries a stable machine-readable code (E_*) next to the
// human-readable message. Codes are part of the public contract.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace doccog
