#pragma once

#include <stdexcept>
#include <string>

namespace pcu {

/// Numeric failure (non-finite loss, strict-mode transport non-convergence).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pcu
