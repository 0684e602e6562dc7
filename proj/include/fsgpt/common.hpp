#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace fsgpt {

// Thrown when tensor extents do not line up for an operation.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when an operation's preconditions are violated (non-shape).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream out;
  (out << ... << args);
  return out.str();
}

}  // namespace fsgpt
