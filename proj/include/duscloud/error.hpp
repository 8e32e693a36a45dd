#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace duscloud {

enum class ErrorKind {
  kInvalidArgument,
  kDegenerateCloud,
  kOutOfRange,
  kShapeMismatch,
  kEmptySet,
  kMissingGradient,
  kTooFewPoints,
  kSingleClass,
  kNoPositives,
  kEmptyRegion,
  kEmptyScores,
  kEmptyReconstruction,
  kParseError,
  kIoError,
  kConfigError,
  kConfigMismatch,
  kMissingCorpus,
  kMissingCheckpoint,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the CLI
// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), detail_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  // The message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace duscloud
