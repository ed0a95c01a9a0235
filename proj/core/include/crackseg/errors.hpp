#pragma once

#include <stdexcept>
#include <string>

namespace crackseg {

// Raised for bad user input: malformed files, invalid configuration, broken
// invariants in data. The CLI maps this to exit status 1; other exceptions
// map to exit status 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace crackseg
