#include "btal/common.hpp"

namespace btal {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kEmptyDataset: return "empty_dataset";
    case ErrorCode::kNonFiniteLoss: return "non_finite_loss";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kBudgetExceeded: return "budget_exceeded";
    case ErrorCode::kNumericalFailure: return "numerical_failure";
    case ErrorCode::kCorruptHeader: return "corrupt_header";
    case ErrorCode::kTruncatedRecords: return "truncated_records";
    case ErrorCode::kRecordDimMismatch: return "record_dim_mismatch";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kConfig: return "config_error";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

}  // namespace btal
