#pragma once

#include <stdexcept>
#include <string>

namespace emusched {

// Base class for all domain errors so the CLI can catch them in one place.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace emusched
