#pragma once

#include <stdexcept>
#include <string>

namespace streameval {

/// Base of every error the harness raises. Callers that only need to report
/// and continue catch this; the concrete types exist for tests and for the
/// CLI's exit-code mapping.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define STREAMEVAL_DEFINE_ERROR(Name)                              \
  class Name : public Error {                                      \
   public:                                                         \
    using Error::Error;                                            \
    const char* kind() const noexcept override { return #Name; }   \
  };

// core
STREAMEVAL_DEFINE_ERROR(ParseError)
STREAMEVAL_DEFINE_ERROR(SchemaError)

// stream
STREAMEVAL_DEFINE_ERROR(SourceNotFound)
STREAMEVAL_DEFINE_ERROR(EmptySource)
STREAMEVAL_DEFINE_ERROR(ClockError)

// memory
STREAMEVAL_DEFINE_ERROR(OrderError)
STREAMEVAL_DEFINE_ERROR(EmptyMemory)

// backend
STREAMEVAL_DEFINE_ERROR(BackendUnavailable)
STREAMEVAL_DEFINE_ERROR(BackendTimeout)
STREAMEVAL_DEFINE_ERROR(MalformedReply)

// metrics
STREAMEVAL_DEFINE_ERROR(JudgeUnavailable)
STREAMEVAL_DEFINE_ERROR(MalformedVerdict)
STREAMEVAL_DEFINE_ERROR(DegenerateTrack)
STREAMEVAL_DEFINE_ERROR(MissingMetadata)

// cli
STREAMEVAL_DEFINE_ERROR(ConfigError)
STREAMEVAL_DEFINE_ERROR(MissingLog)

#undef STREAMEVAL_DEFINE_ERROR

}  // namespace streameval
