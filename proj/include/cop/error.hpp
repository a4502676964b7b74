#pragma once

#include <stdexcept>
#include <string>

namespace cop {

enum class ErrorKind {
  Schema,
  Row,
  Data,
  Domain,
  Estimation,
  Collinearity,
  Separation,
  Convergence,
  NoInformation,
  Anchoring,
  Bootstrap,
  Config,
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

// Every failure raised by the library carries a kind so the CLI can map it
// onto its exit-code contract.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// 2 for data/config problems, 3 for numerical failures.
int exit_code(ErrorKind kind) noexcept;

}  // namespace cop
