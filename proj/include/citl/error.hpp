#pragma once

#include <stdexcept>
#include <string>

namespace citl {

/// Root of every error the pipeline raises. `kind()` names the failure class
/// so callers that log or persist errors do not need RTTI.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CITL_DEFINE_ERROR(Name)                                          \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  }

// domain
CITL_DEFINE_ERROR(InvalidScore);
CITL_DEFINE_ERROR(InvalidBaseline);
CITL_DEFINE_ERROR(InsufficientData);
CITL_DEFINE_ERROR(EmptyInput);

// model gateway
CITL_DEFINE_ERROR(TransportError);
CITL_DEFINE_ERROR(PolicyError);
CITL_DEFINE_ERROR(ModalityError);
CITL_DEFINE_ERROR(ScriptExhausted);

// prompt kit
CITL_DEFINE_ERROR(MissingBinding);
CITL_DEFINE_ERROR(UnexpectedBinding);
CITL_DEFINE_ERROR(UnknownTemplate);
CITL_DEFINE_ERROR(NoCodeBlock);
CITL_DEFINE_ERROR(TagNotFound);
CITL_DEFINE_ERROR(MalformedSummary);
CITL_DEFINE_ERROR(ScoreOutOfRange);
CITL_DEFINE_ERROR(MissingDimension);
CITL_DEFINE_ERROR(NotANumber);
CITL_DEFINE_ERROR(Unclassifiable);

// renderer
CITL_DEFINE_ERROR(RenderTimeout);
CITL_DEFINE_ERROR(BrowserUnavailable);
CITL_DEFINE_ERROR(UndecodableImage);

// judge / engine
CITL_DEFINE_ERROR(EvaluationFailed);
CITL_DEFINE_ERROR(MixedJudgeKinds);

// corpus
CITL_DEFINE_ERROR(PoolTooSmall);
CITL_DEFINE_ERROR(NoEligibleRuns);

// cli
CITL_DEFINE_ERROR(ConfigError);
CITL_DEFINE_ERROR(UnknownCommand);

#undef CITL_DEFINE_ERROR

}  // namespace citl
