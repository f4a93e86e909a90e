#pragma once

#include <stdexcept>
#include <string>

namespace spa {

enum class ErrorCode {
  size_mismatch,
  non_finite_value,
  malformed_header,
  out_of_range_label,
  parse_error,
  zero_row,
  dimension_mismatch,
  norm_violation,
  non_finite_loss,
  unknown_node_in_edge,
  duration_order_violation,
  no_start_phase,
  dead_end_phase,
  unreachable_terminal,
  max_len_too_small,
  step_out_of_range,
  invalid_range,
  empty_dataset,
  invalid_temperature,
  weight_violation,
  length_mismatch,
  packing_failure,
  unknown_config_key,
  io_error,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::size_mismatch: return "SizeMismatch";
    case ErrorCode::non_finite_value: return "NonFiniteValue";
    case ErrorCode::malformed_header: return "MalformedHeader";
    case ErrorCode::out_of_range_label: return "OutOfRangeLabel";
    case ErrorCode::parse_error: return "ParseError";
    case ErrorCode::zero_row: return "ZeroRow";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::norm_violation: return "NormViolation";
    case ErrorCode::non_finite_loss: return "NonFiniteLoss";
    case ErrorCode::unknown_node_in_edge: return "UnknownNodeInEdge";
    case ErrorCode::duration_order_violation: return "DurationOrderViolation";
    case ErrorCode::no_start_phase: return "NoStartPhase";
    case ErrorCode::dead_end_phase: return "DeadEndPhase";
    case ErrorCode::unreachable_terminal: return "UnreachableTerminal";
    case ErrorCode::max_len_too_small: return "MaxLenTooSmall";
    case ErrorCode::step_out_of_range: return "StepOutOfRange";
    case ErrorCode::invalid_range: return "InvalidRange";
    case ErrorCode::empty_dataset: return "EmptyDataset";
    case ErrorCode::invalid_temperature: return "InvalidTemperature";
    case ErrorCode::weight_violation: return "WeightViolation";
    case ErrorCode::length_mismatch: return "LengthMismatch";
    case ErrorCode::packing_failure: return "PackingFailure";
    case ErrorCode::unknown_config_key: return "UnknownConfigKey";
    case ErrorCode::io_error: return "IoError";
  }
  return "Unknown";
}

/// All library failures surface as spa::Error. `validation()` distinguishes
/// bad inputs (malformed files, contract violations) from runtime faults,
/// which the CLI maps to exit codes 1 and 2.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

  bool validation() const {
    return code_ != ErrorCode::non_finite_loss && code_ != ErrorCode::io_error;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace spa
