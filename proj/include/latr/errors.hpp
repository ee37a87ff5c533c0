#pragma once

#include <stdexcept>
#include <string>

namespace latr {

// Error taxonomy shared across the library. The CLI maps these onto its
// stable exit codes, so new failure modes should reuse one of these types.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IndexError : std::runtime_error {
  explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed values, violated invariants, undefined results (e.g. a loss over
// zero positions).
struct ValueError : std::runtime_error {
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset or corpus ended up empty after filtering.
struct EmptyDataError : std::runtime_error {
  explicit EmptyDataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Artifact container (checkpoint, vocabulary file) does not parse.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace latr
