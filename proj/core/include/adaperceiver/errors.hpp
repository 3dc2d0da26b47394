#pragma once

#include <stdexcept>
#include <string>

namespace adaperceiver {

// Error taxonomy shared across the library. Every checked contract throws one
// of these; callers that want a broad net can catch adaperceiver::Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define ADAPERCEIVER_DEFINE_ERROR(Name)        \
  struct Name : Error {                        \
    using Error::Error;                        \
  }

ADAPERCEIVER_DEFINE_ERROR(ShapeMismatch);
ADAPERCEIVER_DEFINE_ERROR(AllMaskedRow);
ADAPERCEIVER_DEFINE_ERROR(GraphCycle);
ADAPERCEIVER_DEFINE_ERROR(NonDeterministicF);
ADAPERCEIVER_DEFINE_ERROR(OddHeadDim);
ADAPERCEIVER_DEFINE_ERROR(EmptyGranularities);
ADAPERCEIVER_DEFINE_ERROR(NonMonotoneGranularities);
ADAPERCEIVER_DEFINE_ERROR(MatDimOutOfRange);
ADAPERCEIVER_DEFINE_ERROR(BadImageShape);
ADAPERCEIVER_DEFINE_ERROR(InvalidConfig);
ADAPERCEIVER_DEFINE_ERROR(LabelOutOfRange);
ADAPERCEIVER_DEFINE_ERROR(NonFiniteLoss);
ADAPERCEIVER_DEFINE_ERROR(BadMagicNumber);
ADAPERCEIVER_DEFINE_ERROR(CountMismatch);
ADAPERCEIVER_DEFINE_ERROR(UnknownDataset);
ADAPERCEIVER_DEFINE_ERROR(UnknownPolicy);
ADAPERCEIVER_DEFINE_ERROR(IoError);

#undef ADAPERCEIVER_DEFINE_ERROR

}  // namespace adaperceiver
