#include "cop/error.hpp"

namespace cop {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Row: return "row";
    case ErrorKind::Data: return "data";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Estimation: return "estimation";
    case ErrorKind::Collinearity: return "collinearity";
    case ErrorKind::Separation: return "separation";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::NoInformation: return "no-information";
    case ErrorKind::Anchoring: return "anchoring";
    case ErrorKind::Bootstrap: return "bootstrap";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Convergence:
    case ErrorKind::Separation:
    case ErrorKind::Bootstrap:
      return 3;
    default:
      return 2;
  }
}

}  // namespace cop
