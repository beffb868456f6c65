#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qlandscape {

enum class ErrorKind {
  InvalidDimension,
  DimensionMismatch,
  InvalidArgument,
  Numerical,
  IndexOutOfRange,
  NotInformationallyComplete,
  NotControllable,
  EstimationFailed,
  ProbeFailure,
  UnknownPreset,
  GradientSource,
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidDimension: return "invalid-dimension";
    case ErrorKind::DimensionMismatch: return "dimension-mismatch";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::IndexOutOfRange: return "index-out-of-range";
    case ErrorKind::NotInformationallyComplete: return "not-informationally-complete";
    case ErrorKind::NotControllable: return "not-controllable";
    case ErrorKind::EstimationFailed: return "estimation-failed";
    case ErrorKind::ProbeFailure: return "probe-failure";
    case ErrorKind::UnknownPreset: return "unknown-preset";
    case ErrorKind::GradientSource: return "gradient-source";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

/// Base error for every module. `kind()` is stable and machine readable;
/// the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by direct-inverse reconstruction when the measurement map is
/// rank deficient. Carries the offending smallest singular value.
class NotInformationallyCompleteError : public Error {
 public:
  NotInformationallyCompleteError(double s_min, double s_max)
      : Error(ErrorKind::NotInformationallyComplete,
              "measurement map is not informationally complete (s_min=" +
                  std::to_string(s_min) + ", s_max=" + std::to_string(s_max) + ")"),
        s_min_(s_min) {}

  double s_min() const noexcept { return s_min_; }

 private:
  double s_min_;
};

/// Failure of the gradient (or value) source inside the optimizer loop.
class GradientSourceError : public Error {
 public:
  GradientSourceError(int iteration, ErrorKind cause, const std::string& what)
      : Error(ErrorKind::GradientSource,
              "gradient source failed at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration),
        cause_(cause) {}

  int iteration() const noexcept { return iteration_; }
  ErrorKind cause() const noexcept { return cause_; }

 private:
  int iteration_;
  ErrorKind cause_;
};

namespace detail {

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

inline void require_same_dim(long a, long b, std::string_view what) {
  if (a != b) {
    throw Error(ErrorKind::DimensionMismatch,
                std::string(what) + ": " + std::to_string(a) + " != " + std::to_string(b));
  }
}

}  // namespace detail
}  // namespace qlandscape
