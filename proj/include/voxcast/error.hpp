#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace voxcast {

enum class ErrorKind {
  EmptyCloud,
  PointOutOfBounds,
  DegenerateCloud,
  InvalidGridSpec,
  ShapeMismatch,
  DegenerateBatch,
  InvalidScore,
  WrongHistoryLength,
  MissingFile,
  MetadataParse,
  MissingRowTag,
  InsufficientTriplets,
  EmptyStore,
  TypeMismatch,
  MissingCheckpoint,
  ConfigError,
  IoError,
  FormatError,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace voxcast
