#pragma once

#include <stdexcept>
#include <string>

namespace r2nn {

// Mirrors r2nn_status in the C header; keep the numeric values in sync.
enum class ErrorCode {
  InvalidArgument = 1,
  InvalidParameter = 2,
  Topology = 3,
  Pole = 4,
  NearResonance = 5,
  Unstable = 6,
  Numeric = 7,
  Io = 8,
  Parse = 9,
  Undecidable = 10,
  Nyquist = 11,
  RateMismatch = 12,
  NonUniform = 13,
  Diverged = 14,
  Exists = 15,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by ac solves whose harmonic matrix is numerically singular.
class NearResonanceError : public Error {
 public:
  NearResonanceError(double omega, const std::string& what)
      : Error(ErrorCode::NearResonance, what), omega_(omega) {}
  double omega() const noexcept { return omega_; }

 private:
  double omega_;
};

// Raised when a time-domain run produces non-finite or runaway values.
class NumericError : public Error {
 public:
  NumericError(std::size_t step, const std::string& what)
      : Error(ErrorCode::Numeric, what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace r2nn
