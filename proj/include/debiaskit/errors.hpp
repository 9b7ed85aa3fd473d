#pragma once

#include <stdexcept>
#include <string>

namespace debiaskit {

// Base for all library errors. kind() is a stable machine-readable tag that
// the CLI echoes in its error JSON.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

private:
  std::string kind_;
};

#define DEBIASKIT_DEFINE_ERROR(NAME)                    \
  class NAME : public Error {                           \
  public:                                               \
    explicit NAME(const std::string& message)           \
        : Error(#NAME, message) {}                      \
  };

DEBIASKIT_DEFINE_ERROR(OutOfFrame)
DEBIASKIT_DEFINE_ERROR(SpecInvalid)
DEBIASKIT_DEFINE_ERROR(EmptyDataset)
DEBIASKIT_DEFINE_ERROR(MissingClass)
DEBIASKIT_DEFINE_ERROR(MissingRaster)
DEBIASKIT_DEFINE_ERROR(NoModel)
DEBIASKIT_DEFINE_ERROR(MissingPrediction)
DEBIASKIT_DEFINE_ERROR(MalformedFile)
DEBIASKIT_DEFINE_ERROR(DegenerateData)
DEBIASKIT_DEFINE_ERROR(NonFinite)
DEBIASKIT_DEFINE_ERROR(DimensionMismatch)
DEBIASKIT_DEFINE_ERROR(MissingProbs)
DEBIASKIT_DEFINE_ERROR(ModelMismatch)
DEBIASKIT_DEFINE_ERROR(SizeMismatch)
DEBIASKIT_DEFINE_ERROR(EmptyGrid)
DEBIASKIT_DEFINE_ERROR(ConfigError)
DEBIASKIT_DEFINE_ERROR(StageFailure)

#undef DEBIASKIT_DEFINE_ERROR

}  // namespace debiaskit
