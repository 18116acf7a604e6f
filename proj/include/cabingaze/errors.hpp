#pragma once

#include <stdexcept>
#include <string>

namespace cabingaze {

// Exit-code buckets used by the CLI: config -> 2, data -> 3, numeric -> 4.
enum class ErrorCategory { Config = 2, Data = 3, Numeric = 4 };

class Error : public std::runtime_error {
public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

private:
  ErrorCategory category_;
};

#define CABINGAZE_DEFINE_ERROR(Name, Category)            \
  class Name : public Error {                             \
  public:                                                 \
    explicit Name(const std::string& what)                \
        : Error(ErrorCategory::Category, what) {}         \
  }

CABINGAZE_DEFINE_ERROR(ConfigError, Config);

CABINGAZE_DEFINE_ERROR(IoError, Data);
CABINGAZE_DEFINE_ERROR(UnknownZone, Data);
CABINGAZE_DEFINE_ERROR(LengthMismatch, Data);
CABINGAZE_DEFINE_ERROR(LabelMissing, Data);
CABINGAZE_DEFINE_ERROR(EmptySet, Data);
CABINGAZE_DEFINE_ERROR(MalformedReport, Data);
CABINGAZE_DEFINE_ERROR(ShapeMismatch, Data);
CABINGAZE_DEFINE_ERROR(BadLayout, Data);

CABINGAZE_DEFINE_ERROR(InvalidRotation, Numeric);
CABINGAZE_DEFINE_ERROR(BehindCamera, Numeric);
CABINGAZE_DEFINE_ERROR(DegenerateConfiguration, Numeric);
CABINGAZE_DEFINE_ERROR(NoConvergence, Numeric);
CABINGAZE_DEFINE_ERROR(CoincidentPoints, Numeric);
CABINGAZE_DEFINE_ERROR(NotUnit, Numeric);
CABINGAZE_DEFINE_ERROR(DegenerateDirection, Numeric);
CABINGAZE_DEFINE_ERROR(FaceAtOrigin, Numeric);
CABINGAZE_DEFINE_ERROR(SingularHomography, Numeric);
CABINGAZE_DEFINE_ERROR(DivergenceDetected, Numeric);
CABINGAZE_DEFINE_ERROR(BoardNotVisible, Numeric);

#undef CABINGAZE_DEFINE_ERROR

}  // namespace cabingaze
