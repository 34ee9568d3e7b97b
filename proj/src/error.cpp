#include "voxcast/error.hpp"

namespace voxcast {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::EmptyCloud: return "EmptyCloud";
    case ErrorKind::PointOutOfBounds: return "PointOutOfBounds";
    case ErrorKind::DegenerateCloud: return "DegenerateCloud";
    case ErrorKind::InvalidGridSpec: return "InvalidGridSpec";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::InvalidScore: return "InvalidScore";
    case ErrorKind::WrongHistoryLength: return "WrongHistoryLength";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::MetadataParse: return "MetadataParse";
    case ErrorKind::MissingRowTag: return "MissingRowTag";
    case ErrorKind::InsufficientTriplets: return "InsufficientTriplets";
    case ErrorKind::EmptyStore: return "EmptyStore";
    case ErrorKind::TypeMismatch: return "TypeMismatch";
    case ErrorKind::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FormatError: return "FormatError";
  }
  return "Unknown";
}

}  // namespace voxcast
