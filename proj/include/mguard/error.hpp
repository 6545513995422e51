#pragma once

#include <stdexcept>
#include <string>

namespace mguard {

// Categories map onto distinct CLI exit codes.
enum class ErrorKind { kUsage, kConfig, kIo, kData, kShape, kDivergence, kState };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error ConfigError(const std::string& m) { return {ErrorKind::kConfig, m}; }
inline Error IoError(const std::string& m) { return {ErrorKind::kIo, m}; }
inline Error DataError(const std::string& m) { return {ErrorKind::kData, m}; }
inline Error ShapeError(const std::string& m) { return {ErrorKind::kShape, m}; }
inline Error StateError(const std::string& m) { return {ErrorKind::kState, m}; }

}  // namespace mguard
