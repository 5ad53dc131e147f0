#pragma once

#include <stdexcept>
#include <string>

namespace crsn {

// Machine-parsable failure categories. The CLI prints the category token as
// the first word of its single-line error output and exits 1.
enum class ErrorCategory {
  ConfigInvalid,
  DataMissing,
  CkptCorrupt,
  GapTooSmall,
  SingularBasis,
  NonFiniteGrad,
};

inline const char* category_token(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::ConfigInvalid: return "CONFIG_INVALID";
    case ErrorCategory::DataMissing: return "DATA_MISSING";
    case ErrorCategory::CkptCorrupt: return "CKPT_CORRUPT";
    case ErrorCategory::GapTooSmall: return "GAP_TOO_SMALL";
    case ErrorCategory::SingularBasis: return "SINGULAR_BASIS";
    case ErrorCategory::NonFiniteGrad: return "NONFINITE_GRAD";
  }
  return "UNKNOWN";
}

struct Error : std::runtime_error {
  ErrorCategory category;
  Error(ErrorCategory c, const std::string& msg)
      : std::runtime_error(msg), category(c) {}
};

struct ConfigInvalid : Error {
  explicit ConfigInvalid(const std::string& msg)
      : Error(ErrorCategory::ConfigInvalid, msg) {}
};

struct DataMissing : Error {
  explicit DataMissing(const std::string& msg)
      : Error(ErrorCategory::DataMissing, msg) {}
};

struct CkptCorrupt : Error {
  explicit CkptCorrupt(const std::string& msg)
      : Error(ErrorCategory::CkptCorrupt, msg) {}
};

// The basis matrix hit a pivot below tolerance during LU factorization.
struct SingularBasis : Error {
  int pivot_index;
  SingularBasis(int pivot, const std::string& msg)
      : Error(ErrorCategory::SingularBasis, msg), pivot_index(pivot) {}
};

struct NonFiniteGradient : Error {
  int param_id;
  std::size_t slot;
  NonFiniteGradient(int param, std::size_t s, const std::string& msg)
      : Error(ErrorCategory::NonFiniteGrad, msg), param_id(param), slot(s) {}
};

// A sequential injection was requested before the running state had drained
// out of the non-linear segment.
struct ConvergenceNotReached : Error {
  double nonlinear_norm;
  ConvergenceNotReached(double norm, const std::string& msg)
      : Error(ErrorCategory::GapTooSmall, msg), nonlinear_norm(norm) {}
};

}  // namespace crsn
