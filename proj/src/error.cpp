#include "gdc/error.hpp"

namespace gdc {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::UniverseTooLarge: return "UniverseTooLarge";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::NotTrainable: return "NotTrainable";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::NoPointwiseConstraints: return "NoPointwiseConstraints";
    case ErrorKind::MixedConstraints: return "MixedConstraints";
    case ErrorKind::EmptySupport: return "EmptySupport";
    case ErrorKind::DegenerateWeights: return "DegenerateWeights";
    case ErrorKind::UnattainableTarget: return "UnattainableTarget";
    case ErrorKind::SupportViolation: return "SupportViolation";
    case ErrorKind::NonpositiveZ: return "NonpositiveZ";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::NoAcceptedSamples: return "NoAcceptedSamples";
  }
  return "Unknown";
}

}  // namespace gdc
