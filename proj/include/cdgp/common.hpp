#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cdgp {

// Row-major to keep matrix memory identical to the on-disk / patch layouts.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

// Error taxonomy. The category drives CLI exit codes (2 config, 3 data,
// 4 numeric); the kind is a stable machine-readable token.
enum class ErrorCategory { Config = 2, Data = 3, Numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message),
        category_(category),
        kind_(std::move(kind)) {}

  ErrorCategory category() const { return category_; }
  const std::string& kind() const { return kind_; }

 private:
  ErrorCategory category_;
  std::string kind_;
};

#define CDGP_DEFINE_ERROR(Name, Category)                      \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& message)                  \
        : Error(ErrorCategory::Category, #Name, message) {}    \
  }

CDGP_DEFINE_ERROR(NotPositiveDefinite, Numeric);
CDGP_DEFINE_ERROR(SingularMatrix, Numeric);
CDGP_DEFINE_ERROR(GraphCycle, Numeric);
CDGP_DEFINE_ERROR(NegativeVariance, Numeric);
CDGP_DEFINE_ERROR(NonFiniteGradient, Numeric);

CDGP_DEFINE_ERROR(GeometryMismatch, Config);
CDGP_DEFINE_ERROR(DimensionMismatch, Config);
CDGP_DEFINE_ERROR(LengthMismatch, Config);
CDGP_DEFINE_ERROR(InvalidSize, Config);
CDGP_DEFINE_ERROR(SizeMismatch, Config);
CDGP_DEFINE_ERROR(LabelOutOfRange, Config);
CDGP_DEFINE_ERROR(TooFewPoints, Config);
CDGP_DEFINE_ERROR(ConfigError, Config);

CDGP_DEFINE_ERROR(BadMagic, Data);
CDGP_DEFINE_ERROR(TruncatedFile, Data);
CDGP_DEFINE_ERROR(CountMismatch, Data);
CDGP_DEFINE_ERROR(MalformedRow, Data);
CDGP_DEFINE_ERROR(BadLabel, Data);
CDGP_DEFINE_ERROR(BadRecordSize, Data);
CDGP_DEFINE_ERROR(VersionMismatch, Data);
CDGP_DEFINE_ERROR(IoError, Data);

#undef CDGP_DEFINE_ERROR

inline void require(bool condition, const char* what) {
  if (!condition) throw Error(ErrorCategory::Numeric, "Internal", what);
}

}  // namespace cdgp
