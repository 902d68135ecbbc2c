#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gppbed {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GPPBED_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

GPPBED_DEFINE_ERROR(InvalidArgument);
GPPBED_DEFINE_ERROR(DimensionMismatch);
GPPBED_DEFINE_ERROR(DegenerateEnsemble);
GPPBED_DEFINE_ERROR(SingularCovariance);
GPPBED_DEFINE_ERROR(SingularInnovation);
GPPBED_DEFINE_ERROR(FactorizationFailure);
GPPBED_DEFINE_ERROR(OutOfDomain);
GPPBED_DEFINE_ERROR(UnstableStep);
GPPBED_DEFINE_ERROR(WeightSumError);
GPPBED_DEFINE_ERROR(SingularNoise);
GPPBED_DEFINE_ERROR(ZeroWeight);
GPPBED_DEFINE_ERROR(GainSolveFailure);
GPPBED_DEFINE_ERROR(EmptyGroup);
GPPBED_DEFINE_ERROR(ZeroPosteriorMass);
GPPBED_DEFINE_ERROR(ConfigError);

#undef GPPBED_DEFINE_ERROR

/// Raised when every log-weight of an outer sample is -inf or NaN.
class AllWeightsUnderflow : public Error {
 public:
  explicit AllWeightsUnderflow(std::size_t sample_index)
      : Error("all importance weights underflow for outer sample " + std::to_string(sample_index)),
        sample_index_(sample_index) {}

  std::size_t sample_index() const noexcept { return sample_index_; }

 private:
  std::size_t sample_index_;
};

/// Wraps a failure of one ensemble member during batch evaluation.
class MemberEvaluationError : public Error {
 public:
  MemberEvaluationError(std::size_t member, const std::string& what)
      : Error("ensemble member " + std::to_string(member) + ": " + what), member_(member) {}

  std::size_t member() const noexcept { return member_; }

 private:
  std::size_t member_;
};

}  // namespace gppbed
