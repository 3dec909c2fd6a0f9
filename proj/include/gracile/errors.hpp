// Copyright 2026 The Gracile Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every module. The CLI maps ConfigError to
// exit code 2 and FormatError to exit code 3.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gracile {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user configuration or a violated precondition of a public call.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A tensor or layer received data of the wrong shape at run time.
class ShapeError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind {
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kTrailingBytes,
  kUnknownDType,
  kShapeMismatch,
  kBadArchitecture,
  kDuplicateName,
  kMissingParameter,
  kMalformedText,
};

inline const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kIo: return "io";
    case FormatErrorKind::kBadMagic: return "bad_magic";
    case FormatErrorKind::kUnsupportedVersion: return "unsupported_version";
    case FormatErrorKind::kTruncated: return "truncated";
    case FormatErrorKind::kTrailingBytes: return "trailing_bytes";
    case FormatErrorKind::kUnknownDType: return "unknown_dtype";
    case FormatErrorKind::kShapeMismatch: return "shape_mismatch";
    case FormatErrorKind::kBadArchitecture: return "bad_architecture";
    case FormatErrorKind::kDuplicateName: return "duplicate_name";
    case FormatErrorKind::kMissingParameter: return "missing_parameter";
    case FormatErrorKind::kMalformedText: return "malformed_text";
  }
  return "unknown";
}

// A file on disk does not match its declared binary or text layout.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& message)
      : Error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace gracile
