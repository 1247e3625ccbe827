#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dermnet {

enum class Err {
  MissingHeader,
  MalformedRow,
  UnknownClass,
  AllAgesMissing,
  MissingFile,
  DecodeError,
  EmptyImage,
  AlreadyNormalized,
  DegenerateSplit,
  EmptyClass,
  SingularTransform,
  ShapeUnderflow,
  ShapeMismatch,
  OutOfRange,
  VersionMismatch,
  CorruptFile,
  EmptyValidation,
  EmptyInput,
  CodeOutOfRange,
  BadConfig,
  LockHeld,
  IoError,
};

inline constexpr std::string_view err_name(Err e) {
  switch (e) {
    case Err::MissingHeader:     return "MissingHeader";
    case Err::MalformedRow:      return "MalformedRow";
    case Err::UnknownClass:      return "UnknownClass";
    case Err::AllAgesMissing:    return "AllAgesMissing";
    case Err::MissingFile:       return "MissingFile";
    case Err::DecodeError:       return "DecodeError";
    case Err::EmptyImage:        return "EmptyImage";
    case Err::AlreadyNormalized: return "AlreadyNormalized";
    case Err::DegenerateSplit:   return "DegenerateSplit";
    case Err::EmptyClass:        return "EmptyClass";
    case Err::SingularTransform: return "SingularTransform";
    case Err::ShapeUnderflow:    return "ShapeUnderflow";
    case Err::ShapeMismatch:     return "ShapeMismatch";
    case Err::OutOfRange:        return "OutOfRange";
    case Err::VersionMismatch:   return "VersionMismatch";
    case Err::CorruptFile:       return "CorruptFile";
    case Err::EmptyValidation:   return "EmptyValidation";
    case Err::EmptyInput:        return "EmptyInput";
    case Err::CodeOutOfRange:    return "CodeOutOfRange";
    case Err::BadConfig:         return "BadConfig";
    case Err::LockHeld:          return "LockHeld";
    case Err::IoError:           return "IoError";
  }
  return "Unknown";
}

/// Library-wide exception. `file`/`line` refer to the offending *input*
/// (e.g. a manifest row), not source code.
class Error : public std::runtime_error {
 public:
  Error(Err kind, const std::string& message,
        std::string file = {}, long line = -1)
      : std::runtime_error(std::string(err_name(kind)) + ": " + message),
        kind(kind), file(std::move(file)), line(line) {}

  Err kind;
  std::string file;
  long line;
};

[[noreturn]] inline void raise(Err kind, const std::string& message,
                               std::string file = {}, long line = -1) {
  throw Error(kind, message, std::move(file), line);
}

}  // namespace dermnet
