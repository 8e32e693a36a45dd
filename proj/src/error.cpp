#include "duscloud/error.hpp"

namespace duscloud {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kDegenerateCloud: return "DegenerateCloud";
    case ErrorKind::kOutOfRange: return "OutOfRange";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kEmptySet: return "EmptySet";
    case ErrorKind::kMissingGradient: return "MissingGradient";
    case ErrorKind::kTooFewPoints: return "TooFewPoints";
    case ErrorKind::kSingleClass: return "SingleClass";
    case ErrorKind::kNoPositives: return "NoPositives";
    case ErrorKind::kEmptyRegion: return "EmptyRegion";
    case ErrorKind::kEmptyScores: return "EmptyScores";
    case ErrorKind::kEmptyReconstruction: return "EmptyReconstruction";
    case ErrorKind::kParseError: return "ParseError";
    case ErrorKind::kIoError: return "IoError";
    case ErrorKind::kConfigError: return "ConfigError";
    case ErrorKind::kConfigMismatch: return "ConfigMismatch";
    case ErrorKind::kMissingCorpus: return "MissingCorpus";
    case ErrorKind::kMissingCheckpoint: return "MissingCheckpoint";
  }
  return "Unknown";
}

}  // namespace duscloud
