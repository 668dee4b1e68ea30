#pragma once

#include <stdexcept>
#include <string>

namespace acvi {

// Base class for all library errors. Subclasses map onto the CLI exit codes:
// ConfigError/UsageError -> 1, everything else -> 2, verification failure -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(what) {}
};

class MaskError : public Error {
 public:
  explicit MaskError(const std::string& what) : Error(what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what) {}
};

class DeterminismError : public Error {
 public:
  explicit DeterminismError(const std::string& what) : Error(what) {}
};

}  // namespace acvi
