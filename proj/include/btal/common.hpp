#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace btal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ErrorCode {
  kDimensionMismatch,
  kEmptyDataset,
  kNonFiniteLoss,
  kInvalidArgument,
  kBudgetExceeded,
  kNumericalFailure,
  kCorruptHeader,
  kTruncatedRecords,
  kRecordDimMismatch,
  kIo,
  kConfig,
  kNotFound,
  kConflict,
  kUnsupported,
  kInternal,
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception. `code` is stable and machine readable; the message
/// is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Identifies an unordered comparison between two catalog items. The smaller
/// item id sits in the high word so the id is independent of presentation
/// order.
struct PairId {
  std::uint64_t value = 0;

  static PairId from_items(std::uint32_t a, std::uint32_t b) {
    const std::uint64_t lo = a < b ? a : b;
    const std::uint64_t hi = a < b ? b : a;
    return PairId{(lo << 32) | hi};
  }

  std::uint32_t first_item() const { return static_cast<std::uint32_t>(value >> 32); }
  std::uint32_t second_item() const { return static_cast<std::uint32_t>(value & 0xffffffffu); }

  friend auto operator<=>(const PairId&, const PairId&) = default;
};

/// Numerically stable logistic function.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

/// p(1-p) for p = sigmoid(z), computed without cancellation for large |z|.
inline double bernoulli_variance(double z) {
  const double e = std::exp(-std::abs(z));
  return e / ((1.0 + e) * (1.0 + e));
}

}  // namespace btal

template <>
struct std::hash<btal::PairId> {
  std::size_t operator()(const btal::PairId& id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};
